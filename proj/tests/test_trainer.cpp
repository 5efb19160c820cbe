#include <doctest.h>

#include <cmath>

#include "mcthfr/evalkit.hpp"
#include "mcthfr/trainer.hpp"

using namespace mcthfr;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.kernel = {3, 3, 1};
  cfg.max_len = {6, 4, 5};
  cfg.classes = 3;
  cfg.feat_dim = {5, 4, 3};
  return cfg;
}

GenConfig tiny_gen(const ModelConfig& cfg, std::uint64_t seed) {
  GenConfig gen;
  gen.classes = cfg.classes;
  gen.feat_dim = cfg.feat_dim;
  gen.len = {LengthRange{4, 6}, LengthRange{2, 4}, LengthRange{3, 5}};
  gen.seed = seed;
  return gen;
}

TrainPlan fast_plan() {
  TrainPlan plan;
  plan.batch = 8;
  plan.max_epochs = 2;
  plan.lr = 1e-3;
  plan.seed = 5;
  return plan;
}

std::vector<float> flatten_params(const MCTParams<float>& p) {
  ParamRegistry<float> reg;
  p.register_into(reg);
  std::vector<float> out;
  for (const auto& [_, t] : reg.entries) out.insert(out.end(), t->values.begin(), t->values.end());
  return out;
}

}  // namespace

TEST_CASE("total loss composition") {
  auto ce = make_scalar<double>(1.0);
  auto gfa = make_scalar<double>(0.5);
  auto lfi = make_scalar<double>(0.25);
  CHECK(total_loss(ce, gfa, lfi, 0.0, 0.0)->values[0] == 1.0);
  CHECK(total_loss(ce, gfa, lfi, 0.4, 0.6)->values[0] == doctest::Approx(1.35).epsilon(1e-15));
  const double base = total_loss(ce, gfa, lfi, 0.4, 0.6)->values[0];
  auto lfi2 = make_scalar<double>(0.5);
  CHECK(total_loss(ce, gfa, lfi2, 0.4, 0.6)->values[0] == doctest::Approx(base + 0.6 * 0.25).epsilon(1e-12));
}

TEST_CASE("curriculum ramp hits the documented schedule") {
  CHECK(ramp_proportion(1) == 0.0);
  CHECK(ramp_proportion(2) == 0.25);
  CHECK(ramp_proportion(3) == 0.5);
  CHECK(ramp_proportion(4) == 0.75);
  CHECK(ramp_proportion(5) == 1.0);
  CHECK(ramp_proportion(6) == 1.0);
  CHECK(ramp_proportion(9) == 1.0);
  CHECK_THROWS_AS(ramp_proportion(0), std::invalid_argument);
}

TEST_CASE("one epoch of training produces exactly one log entry") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 1), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  plan.max_epochs = 1;
  auto res = train(plan, cfg, tr, va);
  CHECK(res.log.epochs.size() == 1);
  CHECK(res.log.stopped_epoch == 1);
  CHECK(res.log.best_epoch == 1);
}

TEST_CASE("training is bit-deterministic given the seed") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 2), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  auto a = train(plan, cfg, tr, va);
  auto b = train(plan, cfg, tr, va);
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    CHECK(a.log.epochs[e].train_total == b.log.epochs[e].train_total);
    CHECK(a.log.epochs[e].val_total == b.log.epochs[e].val_total);
  }
  CHECK(flatten_params(a.mct) == flatten_params(b.mct));
}

TEST_CASE("dynamic curriculum flags exactly half of each batch at epoch three") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 3), 80);
  auto [tr, va] = split_train_val(data, 0.2);  // 64 train -> two batches of 32
  auto plan = fast_plan();
  plan.batch = 32;
  plan.max_epochs = 3;
  auto res = train(plan, cfg, tr, va);
  const auto& counts = res.log.epochs[2].batch_incomplete_counts;
  REQUIRE(counts.size() == 2);
  for (int c : counts) CHECK(c == 16);
  // epoch 1 masks nothing, epoch 2 masks a quarter
  for (int c : res.log.epochs[0].batch_incomplete_counts) CHECK(c == 0);
  for (int c : res.log.epochs[1].batch_incomplete_counts) CHECK(c == 8);
}

TEST_CASE("dynamic training at zero miss rate walks the exact trajectory of complete training") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 4), 40);
  auto [tr, va] = split_train_val(data, 0.2);

  auto plan_dyn = fast_plan();
  plan_dyn.strategy = Strategy::Dynamic;
  plan_dyn.p_miss = 0.0;
  plan_dyn.max_epochs = 2;

  auto plan_com = plan_dyn;
  plan_com.strategy = Strategy::Complete;

  auto a = train(plan_dyn, cfg, tr, va);
  auto b = train(plan_com, cfg, tr, va);
  CHECK(flatten_params(a.mct) == flatten_params(b.mct));
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e)
    CHECK(a.log.epochs[e].train_total == b.log.epochs[e].train_total);
}

TEST_CASE("early stopping never trains past best epoch plus patience") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 5), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  plan.max_epochs = 30;
  plan.patience = 2;
  plan.lr = 5e-2;  // oversized steps so validation loss starts oscillating quickly
  auto res = train(plan, cfg, tr, va);
  CHECK(res.log.stopped_epoch <= res.log.best_epoch + plan.patience);
  // recorded best epoch is the minimum of the validation losses
  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : res.log.epochs)
    if (e.val_total < best) {
      best = e.val_total;
      best_epoch = e.epoch;
    }
  CHECK(res.log.best_epoch == best_epoch);
}

TEST_CASE("logged totals recombine from the logged components") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 6), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  plan.alpha = 0.4;
  plan.beta = 0.6;
  auto res = train(plan, cfg, tr, va);
  for (const auto& e : res.log.epochs) {
    CHECK(std::abs(e.train_total - (e.train_ce + 0.4 * e.train_gfa + 0.6 * e.train_lfi)) <= 1e-6);
    CHECK(std::abs(e.val_total - (e.val_ce + 0.4 * e.val_gfa + 0.6 * e.val_lfi)) <= 1e-6);
  }
}

TEST_CASE("pure task-branch training reports zero reconstruction losses") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 7), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  plan.hfr = false;
  auto res = train(plan, cfg, tr, va);
  for (const auto& e : res.log.epochs) {
    CHECK(e.train_gfa == 0.0);
    CHECK(e.train_lfi == 0.0);
  }
}

TEST_CASE("a diverging run aborts naming the offending step") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 8), 40);
  auto [tr, va] = split_train_val(data, 0.2);
  auto plan = fast_plan();
  plan.lr = 1e15;
  plan.max_epochs = 5;
  CHECK_THROWS_WITH_AS(train(plan, cfg, tr, va), doctest::Contains("step"), std::runtime_error);
}

TEST_CASE("empty splits are rejected") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 9), 10);
  CHECK_THROWS_AS(train(fast_plan(), cfg, {}, data), std::invalid_argument);
  CHECK_THROWS_AS(train(fast_plan(), cfg, data, {}), std::invalid_argument);
}

TEST_CASE("train/val split keeps order, sizes, and disjointness") {
  auto cfg = tiny_cfg();
  auto data = generate_dataset(tiny_gen(cfg, 10), 20);
  auto [tr, va] = split_train_val(data, 0.25);
  CHECK(tr.size() == 15);
  CHECK(va.size() == 5);
  CHECK(tr[0].label == data[0].label);
  CHECK(va[0].label == data[15].label);
  CHECK_THROWS_AS(split_train_val(data, 0.999), std::invalid_argument);
}
