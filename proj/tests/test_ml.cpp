#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "fedstr/errors.hpp"
#include "fedstr/ml/optimize.hpp"
#include "fedstr/util/rng.hpp"

using namespace fedstr;
using namespace fedstr::ml;

namespace {

Dataset one_sample(double x, double y) {
  Dataset d;
  d.dim = 1;
  d.x = {x};
  d.y = {y};
  return d;
}

ModelSpec linear_spec(int dim, std::uint64_t seed = 0) {
  ModelSpec s;
  s.family = ModelFamily::kLinearRegression;
  s.input_dim = dim;
  s.output_dim = 1;
  s.init_seed = seed;
  return s;
}

// Independent finite-difference oracle: central differences on the loss.
std::vector<double> fd_grad(const ModelParams& p, const ModelSpec& spec,
                            const LossSpec& ls, const Dataset& batch,
                            double h = 1e-5) {
  std::vector<double> g(p.values.size());
  ModelParams probe = p;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    probe.values[i] = p.values[i] + h;
    double up = loss(probe, spec, ls, batch);
    probe.values[i] = p.values[i] - h;
    double down = loss(probe, spec, ls, batch);
    probe.values[i] = p.values[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += a[i] * a[i] + b[i] * b[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

Dataset random_batch(Rng& rng, std::size_t n, std::size_t d, int classes) {
  Dataset batch;
  batch.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) batch.x.push_back(rng.normal());
    batch.y.push_back(classes > 0 ? static_cast<double>(rng.below(classes))
                                  : rng.normal());
  }
  return batch;
}

}  // namespace

TEST_CASE("init_model shapes and determinism") {
  auto p = init_model(linear_spec(3));
  CHECK(p.values == std::vector<double>{0, 0, 0, 0});  // 3 weights + bias
  REQUIRE(p.layout.size() == 2);
  CHECK(p.layout[0].name == "w0");
  CHECK(p.layout[0].shape == std::vector<std::uint32_t>{1, 3});
  CHECK(p.layout[1].shape == std::vector<std::uint32_t>{1});

  ModelSpec mlp;
  mlp.family = ModelFamily::kMlp;
  mlp.input_dim = 4;
  mlp.output_dim = 3;
  mlp.hidden = {8, 8};
  mlp.init_seed = 11;
  auto a = init_model(mlp);
  auto b = init_model(mlp);
  CHECK(a == b);
  std::size_t total = 0;
  for (const auto& entry : a.layout) total += entry.size();
  CHECK(total == a.values.size());
  CHECK(a.values != std::vector<double>(a.values.size(), 0.0));
}

TEST_CASE("loss and grad on the hand-worked example") {
  // linear d=1, theta=[w=1,b=0], sample (x=2,y=0): loss 4, grad [8,4]
  auto spec = linear_spec(1);
  ModelParams p = init_model(spec);
  p.values = {1.0, 0.0};
  LossSpec mse{LossKind::kMse};
  auto batch = one_sample(2.0, 0.0);
  CHECK(loss(p, spec, mse, batch) == doctest::Approx(4.0).epsilon(1e-12));
  auto g = grad(p, spec, mse, batch);
  CHECK(g[0] == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(rel_err(g, fd_grad(p, spec, mse, batch)) < 1e-4);

  // zero params, zero targets: loss 0, grad 0
  ModelParams zero = init_model(spec);
  CHECK(loss(zero, spec, mse, one_sample(2.0, 0.0)) == 0.0);
  auto gz = grad(zero, spec, mse, one_sample(2.0, 0.0));
  CHECK(gz == std::vector<double>{0.0, 0.0});
}

TEST_CASE("analytic gradients match finite differences across families") {
  Rng rng(7);
  LossSpec mse{LossKind::kMse};
  LossSpec ce{LossKind::kCrossEntropy};

  for (int trial = 0; trial < 10; ++trial) {
    auto spec = linear_spec(4, trial);
    auto p = init_model(spec);
    for (auto& v : p.values) v = rng.normal();
    auto batch = random_batch(rng, 8, 4, 0);
    CHECK(rel_err(grad(p, spec, mse, batch), fd_grad(p, spec, mse, batch)) < 1e-4);
  }
  for (int trial = 0; trial < 10; ++trial) {
    ModelSpec spec;
    spec.family = ModelFamily::kLogisticRegression;
    spec.input_dim = 3;
    spec.output_dim = 4;
    auto p = init_model(spec);
    for (auto& v : p.values) v = rng.normal();
    auto batch = random_batch(rng, 8, 3, 4);
    CHECK(rel_err(grad(p, spec, ce, batch), fd_grad(p, spec, ce, batch)) < 1e-4);
  }
  for (int trial = 0; trial < 10; ++trial) {
    ModelSpec spec;
    spec.family = ModelFamily::kMlp;
    spec.input_dim = 3;
    spec.output_dim = 1;
    spec.hidden = {6, 5};
    spec.activation = trial % 2 ? Activation::kTanh : Activation::kSigmoid;
    spec.init_seed = 100 + trial;
    auto p = init_model(spec);
    auto batch = random_batch(rng, 6, 3, 0);
    CHECK(rel_err(grad(p, spec, mse, batch), fd_grad(p, spec, mse, batch)) < 1e-4);
  }
}

TEST_CASE("dimension mismatches raise errors") {
  auto spec = linear_spec(3);
  auto p = init_model(spec);
  Dataset wrong;
  wrong.dim = 2;
  wrong.x = {1, 2};
  wrong.y = {0};
  CHECK_THROWS_AS(loss(p, spec, LossSpec{LossKind::kMse}, wrong), ConfigError);
}

TEST_CASE("split_dataset partitions deterministically") {
  Dataset d;
  d.dim = 1;
  for (int i = 0; i < 10; ++i) {
    d.x.push_back(i);
    d.y.push_back(i);
  }
  auto parts = split_dataset(d, 2, 5);
  CHECK(parts[0].rows() == 5);
  CHECK(parts[1].rows() == 5);

  Dataset seven;
  seven.dim = 1;
  for (int i = 0; i < 7; ++i) {
    seven.x.push_back(i);
    seven.y.push_back(i);
  }
  auto three = split_dataset(seven, 3, 5);
  CHECK(three[0].rows() == 3);
  CHECK(three[1].rows() == 2);
  CHECK(three[2].rows() == 2);

  // union equals input as a multiset, parts disjoint
  std::multiset<double> original(seven.y.begin(), seven.y.end());
  std::multiset<double> collected;
  for (const auto& part : three)
    collected.insert(part.y.begin(), part.y.end());
  CHECK(collected == original);

  // determinism
  auto again = split_dataset(seven, 3, 5);
  CHECK(again[0] == three[0]);
  CHECK(again[2] == three[2]);

  CHECK_THROWS_AS(split_dataset(seven, 8, 1), ConfigError);
}

TEST_CASE("csv round trip") {
  auto d = make_synthetic_linear(50, 3, 0.1, 9);
  auto text = dataset_to_csv(d);
  auto back = dataset_from_csv(text);
  CHECK(back == d);
  CHECK_THROWS_AS(dataset_from_csv("f0,target\n1,2\n"), FormatError);
  CHECK_THROWS_AS(dataset_from_csv("f0,y\n1,notanumber\n"), FormatError);
}

TEST_CASE("fedavg inner: null step and single-batch identity") {
  auto spec = linear_spec(2, 3);
  auto data = make_synthetic_linear(16, 2, 0.0, 3);
  auto p = init_model(spec);
  for (auto& v : p.values) v = 0.25;
  LossSpec mse{LossKind::kMse};

  InnerHyperparams hp;
  hp.epochs = 2;
  hp.learning_rate = 0.0;
  auto untouched = inner_optimize(p, spec, mse, data, RunOption::kFedAvg, hp);
  CHECK(untouched.values == p.values);

  hp.learning_rate = 0.1;
  hp.epochs = 1;
  hp.batch_size = 1000;  // whole data in one batch
  auto stepped = inner_optimize(p, spec, mse, data, RunOption::kFedAvg, hp);
  auto g = grad(p, spec, mse, data);
  for (std::size_t i = 0; i < p.values.size(); ++i)
    CHECK(stepped.values[i] ==
          doctest::Approx(p.values[i] - 0.1 * g[i]).epsilon(1e-12));
}

TEST_CASE("diloco single step matches the hand-executed adamw oracle") {
  // one step on the (x=2,y=0) example from theta=[1,0]: grad [8,4];
  // expected values computed independently by executing the update once
  auto spec = linear_spec(1);
  auto p = init_model(spec);
  p.values = {1.0, 0.0};
  LossSpec mse{LossKind::kMse};
  auto data = one_sample(2.0, 0.0);

  InnerHyperparams hp;
  hp.epochs = 1;
  hp.batch_size = 1;
  hp.learning_rate = 0.1;
  hp.adamw = {0.9, 0.999, 1e-8, 0.01};
  auto out = inner_optimize(p, spec, mse, data, RunOption::kDiLoCo, hp);
  CHECK(out.values[0] == doctest::Approx(0.899000000125).epsilon(1e-12));
  CHECK(out.values[1] == doctest::Approx(-0.09999999975000001).epsilon(1e-12));
}

TEST_CASE("divergent training raises with last finite params") {
  auto spec = linear_spec(2, 4);
  auto data = make_synthetic_linear(64, 2, 0.0, 4);
  auto p = init_model(spec);
  InnerHyperparams hp;
  hp.epochs = 50;
  hp.batch_size = 8;
  hp.learning_rate = 1e6;  // guaranteed blow-up
  CHECK_THROWS_AS(inner_optimize(p, spec, LossSpec{LossKind::kMse}, data,
                                 RunOption::kFedAvg, hp),
                  DivergenceError);
  try {
    inner_optimize(p, spec, LossSpec{LossKind::kMse}, data, RunOption::kFedAvg, hp);
  } catch (const DivergenceError& e) {
    for (double v : e.last_finite.values) CHECK(std::isfinite(v));
  }
}

TEST_CASE("progress callback fires per epoch and per step") {
  auto spec = linear_spec(2, 5);
  auto data = make_synthetic_linear(20, 2, 0.0, 5);
  auto p = init_model(spec);
  LossSpec mse{LossKind::kMse};
  InnerHyperparams hp;
  hp.epochs = 3;
  hp.batch_size = 10;
  hp.learning_rate = 0.01;

  int fed_ticks = 0;
  inner_optimize(p, spec, mse, data, RunOption::kFedAvg, hp,
                 [&](int, double) { ++fed_ticks; });
  CHECK(fed_ticks == 3);

  int diloco_ticks = 0;
  inner_optimize(p, spec, mse, data, RunOption::kDiLoCo, hp,
                 [&](int, double) { ++diloco_ticks; });
  CHECK(diloco_ticks == 3);
}

TEST_CASE("outer_fedavg matches an independent elementwise oracle") {
  Rng rng(13);
  auto spec = linear_spec(5, 6);
  for (std::size_t k_count : {1u, 2u, 5u}) {
    std::vector<ModelParams> inner;
    for (std::size_t k = 0; k < k_count; ++k) {
      auto p = init_model(spec);
      for (auto& v : p.values) v = rng.normal();
      inner.push_back(p);
    }
    auto avg = outer_fedavg(inner);
    // brute-force elementwise average
    for (std::size_t i = 0; i < avg.values.size(); ++i) {
      double expect = 0;
      for (const auto& p : inner) expect += p.values[i];
      expect /= static_cast<double>(k_count);
      CHECK(avg.values[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  // K=1 identity and symmetry example
  auto p = init_model(linear_spec(1));
  p.values = {0.0, 2.0};
  auto q = init_model(linear_spec(1));
  q.values = {2.0, 0.0};
  auto avg = outer_fedavg({p, q});
  CHECK(avg.values == std::vector<double>{1.0, 1.0});
  CHECK(outer_fedavg({p}).values == p.values);

  auto bad = init_model(linear_spec(2));
  CHECK_THROWS_AS(outer_fedavg({p, bad}), ConfigError);
}

TEST_CASE("outer_diloco fixed point and single-worker recovery") {
  auto spec = linear_spec(3, 8);
  auto theta = init_model(spec);
  Rng rng(21);
  for (auto& v : theta.values) v = rng.normal();

  SUBCASE("all inner equal to theta_global leaves it unchanged") {
    OuterState state;
    auto [updated, next] = outer_diloco(theta, {theta, theta, theta}, state);
    CHECK(updated.values == theta.values);
    for (double v : next.velocity) CHECK(v == 0.0);
  }

  SUBCASE("mu=0, lr=1, K=1 recovers the inner result exactly") {
    // magnitudes keep theta_inner within [theta/2, 2*theta] so the reversal
    // is exact in ieee754
    ModelParams inner = theta;
    for (std::size_t i = 0; i < inner.values.size(); ++i) {
      double base = theta.values[i] == 0 ? 1.0 : theta.values[i];
      inner.values[i] = base - base * 0.001;
      theta.values[i] = base;
    }
    OuterState state;
    state.momentum = 0.0;
    state.outer_lr = 1.0;
    auto [updated, next] = outer_diloco(theta, {inner}, state);
    CHECK(updated.values == inner.values);  // bitwise
  }

  SUBCASE("two-step scalar trace matches the hand-computed sequence") {
    auto scalar_spec = linear_spec(1);
    auto t = init_model(scalar_spec);
    t.values = {1.0, 0.0};
    t.layout[0].shape = {1, 1};
    OuterState state;
    state.momentum = 0.9;
    state.outer_lr = 1.0;

    auto mk = [&](double v) {
      auto p = t;
      p.values = {v, 0.0};
      return p;
    };
    auto [theta1, s1] = outer_diloco(t, {mk(0.8)}, state);
    CHECK(theta1.values[0] == doctest::Approx(0.6200000000000001).epsilon(1e-15));
    CHECK(s1.velocity[0] == doctest::Approx(0.19999999999999996).epsilon(1e-15));
    auto [theta2, s2] = outer_diloco(theta1, {mk(0.5)}, s1);
    CHECK(theta2.values[0] == doctest::Approx(0.22999999999999993).epsilon(1e-15));
    CHECK(s2.velocity[0] == doctest::Approx(0.30000000000000004).epsilon(1e-15));
  }
}

TEST_CASE("one fedavg round decreases loss on a well-conditioned task") {
  LossSpec mse{LossKind::kMse};
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto data = make_synthetic_linear(600, 5, 0.05, seed);
    auto spec = linear_spec(5, seed);
    auto theta = init_model(spec);
    double before = loss(theta, spec, mse, data);

    auto shards = split_dataset(data, 3, seed);
    std::vector<ModelParams> inner;
    for (std::size_t k = 0; k < shards.size(); ++k) {
      InnerHyperparams hp;
      hp.epochs = 2;
      hp.batch_size = 32;
      hp.learning_rate = 0.02;
      hp.shuffle_seed = mix_seed(seed, k);
      inner.push_back(
          inner_optimize(theta, spec, mse, shards[k], RunOption::kFedAvg, hp));
    }
    auto after_params = outer_fedavg(inner);
    if (loss(after_params, spec, mse, data) < before) ++decreased;
  }
  CHECK(decreased == 10);
}

TEST_CASE("inner_optimize is bitwise reproducible under fixed seeds") {
  auto spec = linear_spec(4, 9);
  auto data = make_synthetic_linear(100, 4, 0.1, 9);
  auto theta = init_model(spec);
  LossSpec mse{LossKind::kMse};
  InnerHyperparams hp;
  hp.epochs = 3;
  hp.batch_size = 16;
  hp.learning_rate = 0.05;
  hp.shuffle_seed = 77;
  auto a = inner_optimize(theta, spec, mse, data, RunOption::kFedAvg, hp);
  auto b = inner_optimize(theta, spec, mse, data, RunOption::kFedAvg, hp);
  CHECK(a.values == b.values);
  auto c = inner_optimize(theta, spec, mse, data, RunOption::kDiLoCo, hp);
  auto d = inner_optimize(theta, spec, mse, data, RunOption::kDiLoCo, hp);
  CHECK(c.values == d.values);
}

TEST_CASE("param serialization is byte-exact and length-checked") {
  ModelParams p;
  p.layout = {{"w", {1, 3}}, {"b", {1}}};
  p.values = {0.5, -1.25, 2.0, 0.125};

  auto blob = serialize_params(p);
  // frozen fixture computed with an independent encoder
  CHECK(to_hex(blob) ==
        "465354520100020000000100770201000000030000000100620101000000"
        "000000000000e03f000000000000f4bf0000000000000040000000000000c03f");
  CHECK(deserialize_params(blob) == p);

  auto blob2 = serialize_params(p);
  CHECK(blob == blob2);  // hash-stable

  SUBCASE("truncation") {
    Bytes cut(blob.begin(), blob.end() - 3);
    CHECK_THROWS_AS(deserialize_params(cut), FormatError);
  }
  SUBCASE("bad magic") {
    auto bad = blob;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_params(bad), FormatError);
  }
  SUBCASE("bad version") {
    auto bad = blob;
    bad[4] = 9;
    CHECK_THROWS_AS(deserialize_params(bad), FormatError);
  }
  SUBCASE("layout length mismatch") {
    ModelParams bad = p;
    bad.values.push_back(1.0);
    CHECK_THROWS_AS(serialize_params(bad), FormatError);
  }
  SUBCASE("non-finite values rejected") {
    ModelParams bad = p;
    bad.values[0] = std::nan("");
    CHECK_THROWS_AS(serialize_params(bad), FormatError);
  }
}

TEST_CASE("model spec and hyperparams wire strings round trip") {
  ModelSpec spec;
  spec.family = ModelFamily::kMlp;
  spec.input_dim = 4;
  spec.output_dim = 3;
  spec.hidden = {8, 8};
  spec.activation = Activation::kRelu;
  spec.init_seed = 42;
  CHECK(ModelSpec::parse(spec.to_string()) == spec);
  CHECK_THROWS_AS(ModelSpec::parse("family=transformer;in=4"), ConfigError);
  CHECK_THROWS_AS(ModelSpec::parse("family=linear"), ConfigError);

  InnerHyperparams hp;
  hp.epochs = 5;
  hp.batch_size = 16;
  hp.learning_rate = 0.005;
  hp.shuffle_seed = 123456789;
  hp.adamw.weight_decay = 0.05;
  CHECK(InnerHyperparams::parse(hp.to_param_string()) == hp);
  CHECK_THROWS_AS(InnerHyperparams::parse("E=0"), ConfigError);
}
