#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "../support/test_support.hpp"
#include "oracles/oracles.hpp"
#include "vocalbp/error.hpp"
#include "vocalbp/training.hpp"

using namespace vbp;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

EncoderConfig tiny_config(std::uint64_t seed = 1) {
  EncoderConfig c;
  c.vocab_size = 16;
  c.hidden_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.max_len = 12;
  c.dropout_p = 0.1;
  c.seed = seed;
  return c;
}

/// Token 4 + k carries the SBP bucket, so the set is learnable.
std::vector<TrainExample> toy_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_int_distribution<int> tok(4, 15), bucket(0, 5);
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainExample e;
    e.id = "T" + std::to_string(i);
    const int b = bucket(g);
    e.sbp = 100.0 + 8.0 * b;
    e.dbp = 60.0 + 5.0 * b;
    std::vector<int> ids{kClsId, 4 + b, tok(g), tok(g), kSepId};
    e.tokens.input_ids = ids;
    e.tokens.input_ids.resize(12, kPadId);
    e.tokens.attention_mask.assign(12, 0);
    std::fill(e.tokens.attention_mask.begin(), e.tokens.attention_mask.begin() + 5, 1);
    e.tokens.true_length = 5;
    out.push_back(e);
  }
  return out;
}

bool same_bits(const ModelParams& a, const ModelParams& b) {
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    const auto& x = a.arrays[i].value;
    if (std::memcmp(x.data(), b.arrays[i].value.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mse / mae / r2 examples") {
  const std::vector<double> y{1, 2, 3};
  CHECK(mse(y, y) == 0.0);
  CHECK(mse(std::vector<double>{0, 0}, std::vector<double>{2, 2}) == 4.0);
  CHECK(mse(y, std::vector<double>{2, 2, 2}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mae(y, y) == 0.0);
  CHECK(mae(std::vector<double>{0, 0}, std::vector<double>{1, 3}) == 2.0);
  CHECK(r2(y, y) == 1.0);
  CHECK(r2(y, std::vector<double>{2, 2, 2}) == 0.0);
  CHECK(r2(y, std::vector<double>{1, 2, 4}) == 0.5);
  CHECK(code_of([] { mse(std::vector<double>{1}, std::vector<double>{1, 2}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { mae(std::vector<double>{}, std::vector<double>{}); }) == ErrorCode::Empty);
  CHECK(code_of([] { r2(std::vector<double>{5, 5}, std::vector<double>{1, 2}); }) == ErrorCode::ZeroVariance);
  CHECK(code_of([] { r2(std::vector<double>{5}, std::vector<double>{1}); }) == ErrorCode::TooFewSamples);
}

TEST_CASE("metric properties over 100 random pairs") {
  std::mt19937_64 g(77);
  std::normal_distribution<double> n(120.0, 15.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y(25), p(25);
    for (auto& v : y) v = n(g);
    for (auto& v : p) v = n(g);
    CHECK(mae(y, p) <= std::sqrt(mse(y, p)) + 1e-12);
    CHECK(std::abs(mse(y, p) - oracle::mse(y, p)) <= 1e-12 * oracle::mse(y, p));
    CHECK(std::abs(mae(y, p) - oracle::mae(y, p)) <= 1e-12 * oracle::mae(y, p));
    CHECK(std::abs(r2(y, p) - oracle::r2(y, p)) <= 1e-12);
    CHECK(r2(y, p) <= 1.0);

    auto ys = y, ps = p;
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g);
    for (std::size_t i = 0; i < 25; ++i) {
      ys[i] = y[perm[i]];
      ps[i] = p[perm[i]];
    }
    CHECK(mse(ys, ps) == doctest::Approx(mse(y, p)).epsilon(1e-13));
    CHECK(mae(ys, ps) == doctest::Approx(mae(y, p)).epsilon(1e-13));
    CHECK(r2(ys, ps) == doctest::Approx(r2(y, p)).epsilon(1e-12));

    const double a = trial % 2 ? -0.37 : 4.2, b = 17.0;
    auto ya = y, pa = p;
    for (auto& v : ya) v = a * v + b;
    for (auto& v : pa) v = a * v + b;
    CHECK(std::abs(r2(ya, pa) - r2(y, p)) <= 1e-12);
  }
  SUBCASE("equal-magnitude residuals") {
    const std::vector<double> y{1, 5, -2, 7}, p{1.5, 4.5, -1.5, 6.5};
    CHECK(mse(y, p) == doctest::Approx(mae(y, p) * mae(y, p)).epsilon(1e-15));
  }
}

TEST_CASE("total_loss and its gradient") {
  const std::vector<double> s{0.1, 0.9, -0.4}, d{1.0, 0.0, 0.5};
  const std::vector<double> st{0.0, 1.0, 0.0}, dt{0.5, 0.5, 0.5};
  const auto lg = total_loss(s, d, st, dt);
  CHECK(lg.loss == doctest::Approx(mse(st, s) + mse(dt, d)).epsilon(1e-15));
  CHECK(total_loss(st, dt, st, dt).loss == 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(lg.d_sbp[i] == doctest::Approx(2.0 * (s[i] - st[i]) / 3.0).epsilon(1e-15));
    const double h = 1e-6;
    auto up = s, down = s;
    up[i] += h;
    down[i] -= h;
    const double fd = (total_loss(up, d, st, dt).loss - total_loss(down, d, st, dt).loss) / (2 * h);
    CHECK(std::abs(fd - lg.d_sbp[i]) < 1e-8);
    auto du = d, dd = d;
    du[i] += h;
    dd[i] -= h;
    const double fdd = (total_loss(s, du, st, dt).loss - total_loss(s, dd, st, dt).loss) / (2 * h);
    CHECK(std::abs(fdd - lg.d_dbp[i]) < 1e-8);
  }
  CHECK(code_of([&] { total_loss(s, d, st, std::vector<double>{1}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("adam_step") {
  const auto p0 = init_params(tiny_config());
  SUBCASE("first step with unit gradient") {
    auto p = p0;
    auto g = zeros_like(p);
    for (auto& a : g.arrays) a.value.setOnes();
    auto st = make_adam_state(p);
    AdamConfig c;
    adam_step(p, g, st, c);
    CHECK(st.step == 1);
    for (std::size_t i = 0; i < p.arrays.size(); ++i) {
      const Mat delta = p.arrays[i].value - p0.arrays[i].value;
      for (Eigen::Index k = 0; k < delta.size(); ++k) CHECK(delta.data()[k] == doctest::Approx(-2e-5 / (1.0 + 1e-8)).epsilon(1e-9));
    }
  }
  SUBCASE("zero gradient leaves params unchanged") {
    auto p = p0;
    auto st = make_adam_state(p);
    for (int i = 0; i < 3; ++i) adam_step(p, zeros_like(p), st, {});
    CHECK(same_bits(p, p0));
  }
  SUBCASE("update opposes the corrected first moment") {
    auto p = p0;
    auto st = make_adam_state(p);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (int step = 0; step < 5; ++step) {
      auto g = zeros_like(p);
      for (auto& a : g.arrays) {
        for (Eigen::Index k = 0; k < a.value.size(); ++k) a.value.data()[k] = n(rng);
      }
      const auto before = p;
      adam_step(p, g, st, {1e-3, 0.9, 0.999, 1e-8});
      for (std::size_t i = 0; i < p.arrays.size(); ++i) {
        const Mat delta = p.arrays[i].value - before.arrays[i].value;
        const auto& m = st.m.arrays[i].value;
        for (Eigen::Index k = 0; k < delta.size(); ++k) {
          if (m.data()[k] != 0.0) CHECK(std::signbit(delta.data()[k]) != std::signbit(m.data()[k]));
        }
      }
    }
  }
  SUBCASE("shape mismatch") {
    auto p = p0;
    auto st = make_adam_state(p);
    auto g = zeros_like(p);
    g.arrays.pop_back();
    CHECK(code_of([&] { adam_step(p, g, st, {}); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("target scaler") {
  const auto set = toy_set(20, 3);
  const auto s = fit_target_scaler(set);
  double m = 0;
  for (const auto& e : set) m += e.sbp;
  CHECK(s.sbp_mean == doctest::Approx(m / 20.0).epsilon(1e-14));
  CHECK(s.sbp_from_unit(s.sbp_to_unit(123.4)) == doctest::Approx(123.4).epsilon(1e-14));
  const auto back = target_scaler_from_json(to_json(s));
  CHECK(back.dbp_std == s.dbp_std);
  CHECK(code_of([&] { fit_target_scaler(std::span<const TrainExample>(set.data(), 1)); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("train") {
  const auto set = toy_set(40, 11);
  const std::span<const TrainExample> tr(set.data(), 32), val(set.data() + 32, 8);
  const auto scaler = fit_target_scaler(tr);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 6;  // 32 = 5 x 6 + 2: the last partial batch is kept
  cfg.adam.learning_rate = 3e-3;
  cfg.seed = 5;
  const auto p0 = init_params(tiny_config(2));

  const auto a = train(p0, tr, val, scaler, cfg);
  REQUIRE(a.history.epochs.size() == 30);
  CHECK(a.history.epochs.front().epoch == 1);
  CHECK(a.history.epochs.back().train_loss < a.history.epochs.front().train_loss);
  for (const auto& r : a.history.epochs) CHECK(std::isfinite(r.val_loss));
  CHECK(a.adam.step == 30 * 6);

  SUBCASE("bit-exact reruns") {
    const auto b = train(p0, tr, val, scaler, cfg);
    CHECK(same_bits(a.params, b.params));
    for (std::size_t i = 0; i < 30; ++i) {
      CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
      CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
    }
    auto other = cfg;
    other.seed = 6;
    CHECK_FALSE(same_bits(a.params, train(p0, tr, val, scaler, other).params));
  }
  SUBCASE("validation loss is the eval-mode loss of the final params") {
    CHECK(a.history.epochs.back().val_loss == dataset_loss(a.params, val, scaler));
  }
  SUBCASE("no validation set") {
    auto short_cfg = cfg;
    short_cfg.epochs = 2;
    const auto r = train(p0, tr, {}, scaler, short_cfg);
    CHECK(std::isnan(r.history.epochs[0].val_loss));
  }
  SUBCASE("contract") {
    auto bad = cfg;
    bad.epochs = 0;
    CHECK(code_of([&] { train(p0, tr, val, scaler, bad); }) == ErrorCode::InvalidConfig);
    bad = cfg;
    bad.batch_size = 0;
    CHECK(code_of([&] { train(p0, tr, val, scaler, bad); }) == ErrorCode::InvalidConfig);
    bad = cfg;
    bad.adam.learning_rate = 0.0;
    CHECK(code_of([&] { train(p0, tr, val, scaler, bad); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { train(p0, {}, val, scaler, cfg); }) == ErrorCode::EmptyDataset);
  }
  SUBCASE("huge learning rate diverges") {
    auto hot = cfg;
    hot.adam.learning_rate = 10.0;
    hot.epochs = 50;
    CHECK(code_of([&] { train(p0, tr, val, scaler, hot); }) == ErrorCode::Diverged);
  }
  SUBCASE("save and reload reproduces metrics bit for bit") {
    testing::TempDir dir("training");
    save_params(dir / "m.bin", a.params);
    const auto loaded = load_params(dir / "m.bin");
    const auto m1 = evaluate(a.params, val, scaler), m2 = evaluate(loaded, val, scaler);
    CHECK(to_json(m1).dump() == to_json(m2).dump());
  }
}

TEST_CASE("evaluate") {
  const auto set = toy_set(30, 21);
  const std::span<const TrainExample> tr(set.data(), 20), te(set.data() + 20, 10);
  const auto scaler = fit_target_scaler(tr);
  auto p = init_params(tiny_config(3));
  for (const char* name : {"sbp_head.w", "sbp_head.b", "dbp_head.w", "dbp_head.b"}) p.arrays[p.index_of(name)].value.setZero();
  const auto m = evaluate(p, te, scaler);
  CHECK(m.n == 10);
  CHECK(m.sbp.r2 <= 1e-12);
  CHECK(m.dbp.r2 <= 1e-12);
  const auto pred = predict(p, te, scaler);
  for (double v : pred.sbp) CHECK(v == scaler.sbp_mean);
  CHECK(m.sbp.mae >= 0.0);
  CHECK(code_of([&] { evaluate(p, {}, scaler); }) == ErrorCode::EmptyDataset);

  SUBCASE("zero-variance targets report r2 as NaN") {
    auto flat = std::vector<TrainExample>(te.begin(), te.end());
    for (auto& e : flat) e.sbp = 120.0;
    const auto f = evaluate(p, flat, scaler);
    CHECK(std::isnan(f.sbp.r2));
    CHECK(to_json(f)["sbp"]["r2"].is_null());
  }
}

TEST_CASE("confusion_matrix") {
  SUBCASE("perfect predictions") {
    const std::vector<double> s{120, 110, 100, 130}, d{70, 70, 80, 90};
    const std::vector<bool> truth{true, false, true, true};
    const auto c = confusion_matrix(s, d, truth);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tp == 3);
    CHECK(c.tn == 1);
  }
  SUBCASE("all predicted normotensive") {
    const std::vector<double> s(10, 100.0), d(10, 60.0);
    std::vector<bool> truth(10, false);
    for (int i = 0; i < 5; ++i) truth[i] = true;
    const auto c = confusion_matrix(s, d, truth);
    CHECK(c.fn == 5);
    CHECK(c.fp == 0);
    CHECK(c.tn == 5);
  }
  SUBCASE("twenty hand-labeled pairs") {
    // (sbp, dbp, truly hypertensive); the right-hand comment is the hand tally
    struct Row {
      double s, d;
      bool t;
    };
    const std::vector<Row> rows{
        {120, 70, true},      // TP
        {110, 70, false},     // TN
        {115, 72, true},      // FN, boundary is normotensive
        {116, 60, false},     // FP
        {100, 73, true},      // TP
        {90, 50, false},      // TN
        {130, 85, true},      // TP
        {114.9, 71.9, false}, // TN
        {115.1, 65, false},   // FP
        {105, 72.5, true},    // TP
        {112, 68, true},      // FN
        {140, 90, false},     // FP
        {101, 61, false},     // TN
        {125, 80, true},      // TP
        {99, 72, false},      // TN
        {118, 75, true},      // TP
        {113, 70, true},      // FN
        {108, 66, false},     // TN
        {150, 95, true},      // TP
        {111, 74, false},     // FP
    };
    std::vector<double> s, d;
    std::vector<bool> t;
    for (const auto& r : rows) {
      s.push_back(r.s);
      d.push_back(r.d);
      t.push_back(r.t);
    }
    const auto c = confusion_matrix(s, d, t);
    CHECK(c.tp == 7);
    CHECK(c.fp == 4);
    CHECK(c.fn == 3);
    CHECK(c.tn == 6);
    std::size_t tp = 0;
    for (const auto& r : rows) tp += (oracle::hypertensive(r.s, r.d) && r.t) ? 1 : 0;
    CHECK(c.tp == tp);
    const auto j = to_json(c);
    CHECK(j["positive_class"] == "hypertensive");
    CHECK(j["tp"] == 7);
  }
  SUBCASE("length mismatch") {
    CHECK(code_of([] { confusion_matrix(std::vector<double>{1}, std::vector<double>{1, 2}, {true}); }) == ErrorCode::LengthMismatch);
  }
}

TEST_CASE("loss curve CSV") {
  testing::TempDir dir("loss");
  TrainHistory h;
  h.epochs = {{1, 2.5, 2.75}, {2, 1.0 / 3.0, std::numeric_limits<double>::quiet_NaN()}};
  write_loss_curve_csv(dir / "l.csv", h);
  CHECK(testing::read_text(dir / "l.csv").rfind("epoch,train_loss,val_loss\n1,2.5,2.75\n", 0) == 0);
  const auto back = read_loss_curve_csv(dir / "l.csv");
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[1].train_loss == 1.0 / 3.0);
  CHECK(std::isnan(back.epochs[1].val_loss));
}
