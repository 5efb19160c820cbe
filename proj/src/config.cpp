#include "mcthfr/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mcthfr {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

struct Parsed {
  // section -> key -> value, plus source order for error reporting
  std::map<std::string, std::map<std::string, std::string>> kv;
};

Parsed tokenize(const std::string& text, std::vector<std::string>& errors) {
  Parsed out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        errors.push_back("line " + std::to_string(lineno) + ": malformed section header '" + t + "'");
        continue;
      }
      section = t.substr(1, t.size() - 2);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
      continue;
    }
    if (section.empty()) {
      errors.push_back("line " + std::to_string(lineno) + ": key outside any section");
      continue;
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (out.kv[section].count(key))
      errors.push_back("line " + std::to_string(lineno) + ": duplicate key '" + section + "." + key + "'");
    out.kv[section][key] = val;
  }
  return out;
}

// Typed consumption of the token map; every touched key is erased so the
// leftovers are exactly the unknown keys.
class Reader {
 public:
  Reader(Parsed& p, std::vector<std::string>& errors) : p_(p), errors_(errors) {}

  bool has(const std::string& sec, const std::string& key) {
    auto s = p_.kv.find(sec);
    return s != p_.kv.end() && s->second.count(key) > 0;
  }

  template <class F>
  void take(const std::string& sec, const std::string& key, F&& apply) {
    auto s = p_.kv.find(sec);
    if (s == p_.kv.end()) return;
    auto k = s->second.find(key);
    if (k == s->second.end()) return;
    try {
      apply(k->second);
    } catch (const std::exception& e) {
      errors_.push_back(sec + "." + key + ": " + e.what());
    }
    s->second.erase(k);
  }

  void take_int(const std::string& sec, const std::string& key, int& dst) {
    take(sec, key, [&](const std::string& v) { dst = parse_ll_checked(v); });
  }
  void take_u64(const std::string& sec, const std::string& key, std::optional<std::uint64_t>& dst) {
    take(sec, key, [&](const std::string& v) {
      std::uint64_t x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected unsigned integer, got '" + v + "'");
      dst = x;
    });
  }
  void take_double(const std::string& sec, const std::string& key, double& dst) {
    take(sec, key, [&](const std::string& v) { dst = parse_double_checked(v); });
  }
  void take_bool(const std::string& sec, const std::string& key, bool& dst) {
    take(sec, key, [&](const std::string& v) {
      if (v == "true") dst = true;
      else if (v == "false") dst = false;
      else throw std::invalid_argument("expected true|false, got '" + v + "'");
    });
  }
  void take_string(const std::string& sec, const std::string& key, std::string& dst) {
    take(sec, key, [&](const std::string& v) { dst = v; });
  }
  void take_range(const std::string& sec, const std::string& key, LengthRange& dst) {
    take(sec, key, [&](const std::string& v) {
      const auto colon = v.find(':');
      if (colon == std::string::npos) throw std::invalid_argument("expected lo:hi, got '" + v + "'");
      dst.lo = parse_ll_checked(trim(v.substr(0, colon)));
      dst.hi = parse_ll_checked(trim(v.substr(colon + 1)));
    });
  }
  void take_rates(const std::string& sec, const std::string& key, std::vector<double>& dst) {
    take(sec, key, [&](const std::string& v) {
      std::vector<double> rates;
      std::size_t pos = 0;
      while (pos <= v.size()) {
        const auto comma = v.find(',', pos);
        const std::string item = trim(v.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (item.empty()) throw std::invalid_argument("empty entry in rate list");
        rates.push_back(parse_double_checked(item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (rates.empty()) throw std::invalid_argument("empty rate list");
      dst = std::move(rates);
    });
  }

  // Everything not consumed is unknown.
  void report_leftovers() {
    static const char* known_sections[] = {"data", "model", "train", "eval"};
    for (auto& [sec, keys] : p_.kv) {
      bool known = false;
      for (const char* s : known_sections) known = known || sec == s;
      if (!known) {
        errors_.push_back("unknown section [" + sec + "]");
        continue;
      }
      for (auto& [key, _] : keys) errors_.push_back("unknown key '" + sec + "." + key + "'");
    }
  }

 private:
  static int parse_ll_checked(const std::string& v) {
    int x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected integer, got '" + v + "'");
    return x;
  }
  static double parse_double_checked(const std::string& v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected number, got '" + v + "'");
    return x;
  }

  Parsed& p_;
  std::vector<std::string>& errors_;
};

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  std::vector<std::string> errors;
  Parsed tokens = tokenize(text, errors);
  Reader r(tokens, errors);
  RunConfig c;

  r.take_int("data", "classes", c.data.classes);
  r.take_int("data", "dim_a", c.data.feat_dim[0]);
  r.take_int("data", "dim_v", c.data.feat_dim[1]);
  r.take_int("data", "dim_l", c.data.feat_dim[2]);
  r.take_range("data", "len_a", c.data.len[0]);
  r.take_range("data", "len_v", c.data.len[1]);
  r.take_range("data", "len_l", c.data.len[2]);
  r.take_double("data", "snr", c.data.snr);
  r.take_double("data", "redundancy", c.data.redundancy);
  r.take_int("data", "n", c.gen_n);
  r.take_u64("data", "seed", c.data_seed);

  r.take_int("model", "hidden", c.model.hidden);
  r.take_int("model", "layers", c.model.layers);
  r.take_int("model", "heads", c.model.heads);
  r.take_int("model", "head_dim", c.model.head_dim);
  r.take_int("model", "kernel_a", c.model.kernel[0]);
  r.take_int("model", "kernel_v", c.model.kernel[1]);
  r.take_int("model", "kernel_l", c.model.kernel[2]);
  r.take_int("model", "max_a", c.model.max_len[0]);
  r.take_int("model", "max_v", c.model.max_len[1]);
  r.take_int("model", "max_l", c.model.max_len[2]);
  r.take_int("model", "ffn_hidden", c.model.ffn_hidden);
  r.take_int("model", "classifier_depth", c.model.classifier_depth);
  r.take_bool("model", "use_gamma_b", c.model.use_gamma_b);
  r.take_bool("model", "use_gamma_e", c.model.use_gamma_e);

  std::string strategy = strategy_name(c.train.strategy);
  r.take_string("train", "strategy", strategy);
  try {
    c.train.strategy = parse_strategy(strategy);
  } catch (const std::exception& e) {
    errors.push_back(std::string("train.strategy: ") + e.what());
  }
  r.take_double("train", "one_to_one_rate", c.train.one_to_one_rate);
  r.take_double("train", "miss_rate", c.train.p_miss);
  r.take_double("train", "alpha", c.train.alpha);
  r.take_double("train", "beta", c.train.beta);
  r.take_double("train", "lr", c.train.lr);
  r.take_double("train", "weight_decay", c.train.weight_decay);
  r.take_int("train", "batch", c.train.batch);
  r.take_int("train", "max_epochs", c.train.max_epochs);
  r.take_int("train", "patience", c.train.patience);
  r.take_int("train", "ramp_epochs", c.train.ramp_epochs);
  r.take_double("train", "val_fraction", c.train.val_fraction);
  r.take_bool("train", "hfr", c.train.hfr);
  std::string metric = gfa_metric_name(c.train.gfa_metric);
  r.take_string("train", "gfa_metric", metric);
  try {
    c.train.gfa_metric = parse_gfa_metric(metric);
  } catch (const std::exception& e) {
    errors.push_back(std::string("train.gfa_metric: ") + e.what());
  }
  r.take_int("train", "cmd_order", c.train.cmd_order);
  r.take_u64("train", "seed", c.train_seed);

  r.take_rates("eval", "rates", c.eval.rates);
  r.take_int("eval", "mask_seeds", c.eval.mask_seeds);
  r.take_u64("eval", "mask_seed_base", c.eval.mask_seed_base);

  r.report_leftovers();
  if (!errors.empty()) {
    std::string msg = "config: " + std::to_string(errors.size()) + " problem(s):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }

  // model input dims follow the data section
  c.model.feat_dim = c.data.feat_dim;
  return c;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream o;
  o << "[data]\n";
  o << "classes = " << data.classes << "\n";
  o << "dim_a = " << data.feat_dim[0] << "\n";
  o << "dim_v = " << data.feat_dim[1] << "\n";
  o << "dim_l = " << data.feat_dim[2] << "\n";
  o << "len_a = " << data.len[0].lo << ":" << data.len[0].hi << "\n";
  o << "len_v = " << data.len[1].lo << ":" << data.len[1].hi << "\n";
  o << "len_l = " << data.len[2].lo << ":" << data.len[2].hi << "\n";
  o << "snr = " << fmt(data.snr) << "\n";
  o << "redundancy = " << fmt(data.redundancy) << "\n";
  o << "n = " << gen_n << "\n";
  if (data_seed) o << "seed = " << *data_seed << "\n";
  o << "\n[model]\n";
  o << "hidden = " << model.hidden << "\n";
  o << "layers = " << model.layers << "\n";
  o << "heads = " << model.heads << "\n";
  o << "head_dim = " << model.head_dim << "\n";
  o << "kernel_a = " << model.kernel[0] << "\n";
  o << "kernel_v = " << model.kernel[1] << "\n";
  o << "kernel_l = " << model.kernel[2] << "\n";
  o << "max_a = " << model.max_len[0] << "\n";
  o << "max_v = " << model.max_len[1] << "\n";
  o << "max_l = " << model.max_len[2] << "\n";
  o << "ffn_hidden = " << model.ffn_hidden << "\n";
  o << "classifier_depth = " << model.classifier_depth << "\n";
  o << "use_gamma_b = " << (model.use_gamma_b ? "true" : "false") << "\n";
  o << "use_gamma_e = " << (model.use_gamma_e ? "true" : "false") << "\n";
  o << "\n[train]\n";
  o << "strategy = " << strategy_name(train.strategy) << "\n";
  o << "one_to_one_rate = " << fmt(train.one_to_one_rate) << "\n";
  o << "miss_rate = " << fmt(train.p_miss) << "\n";
  o << "alpha = " << fmt(train.alpha) << "\n";
  o << "beta = " << fmt(train.beta) << "\n";
  o << "lr = " << fmt(train.lr) << "\n";
  o << "weight_decay = " << fmt(train.weight_decay) << "\n";
  o << "batch = " << train.batch << "\n";
  o << "max_epochs = " << train.max_epochs << "\n";
  o << "patience = " << train.patience << "\n";
  o << "ramp_epochs = " << train.ramp_epochs << "\n";
  o << "val_fraction = " << fmt(train.val_fraction) << "\n";
  o << "hfr = " << (train.hfr ? "true" : "false") << "\n";
  o << "gfa_metric = " << gfa_metric_name(train.gfa_metric) << "\n";
  o << "cmd_order = " << train.cmd_order << "\n";
  if (train_seed) o << "seed = " << *train_seed << "\n";
  o << "\n[eval]\n";
  o << "rates = ";
  for (std::size_t i = 0; i < eval.rates.size(); ++i) o << (i ? "," : "") << fmt(eval.rates[i]);
  o << "\n";
  o << "mask_seeds = " << eval.mask_seeds << "\n";
  if (eval.mask_seed_base) o << "mask_seed_base = " << *eval.mask_seed_base << "\n";
  return o.str();
}

void RunConfig::validate() {
  std::vector<std::string> errors;
  if (!data_seed) errors.push_back("data.seed is required (seed keys have no default)");
  if (!train_seed) errors.push_back("train.seed is required (seed keys have no default)");
  if (!eval.mask_seed_base) errors.push_back("eval.mask_seed_base is required (seed keys have no default)");
  try {
    data.validate();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  try {
    model.validate();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  try {
    train.validate();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  if (gen_n < 1) errors.push_back("data.n must be >= 1");
  if (eval.mask_seeds < 1) errors.push_back("eval.mask_seeds must be >= 1");
  for (std::size_t i = 1; i < eval.rates.size(); ++i)
    if (eval.rates[i] <= eval.rates[i - 1]) errors.push_back("eval.rates must be strictly increasing");
  for (double r : eval.rates)
    if (r < 0.0 || r > 1.0) errors.push_back("eval.rates entries must be in [0,1]");
  if (!errors.empty()) {
    std::string msg = "config: " + std::to_string(errors.size()) + " problem(s):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  data.seed = *data_seed;
  train.seed = *train_seed;
}

}  // namespace mcthfr
