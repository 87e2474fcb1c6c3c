#include <benchmark/benchmark.h>

#include "fedstr/crypto/schnorr.hpp"
#include "fedstr/crypto/sha256.hpp"
#include "fedstr/events/schemas.hpp"
#include "fedstr/ml/optimize.hpp"
#include "fedstr/nostr/event.hpp"
#include "fedstr/util/rng.hpp"

using namespace fedstr;

namespace {

Keypair bench_key() {
  SecretKey sk{};
  sk.fill(0x42);
  sk[0] = 0;
  return generate_keypair(sk);
}

void BM_Sha256(benchmark::State& state) {
  Bytes blob(static_cast<std::size_t>(state.range(0)));
  Rng rng(1);
  for (auto& b : blob) b = static_cast<std::uint8_t>(rng.below(256));
  for (auto _ : state) benchmark::DoNotOptimize(sha256(blob));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Sha256)->Arg(1024)->Arg(400 * 1024);

void BM_SchnorrSign(benchmark::State& state) {
  auto kp = bench_key();
  auto msg = sha256(std::string_view("message"));
  for (auto _ : state) benchmark::DoNotOptimize(schnorr_sign(msg, kp));
}
BENCHMARK(BM_SchnorrSign);

void BM_SchnorrVerify(benchmark::State& state) {
  auto kp = bench_key();
  auto msg = sha256(std::string_view("message"));
  auto sig = schnorr_sign(msg, kp);
  for (auto _ : state) benchmark::DoNotOptimize(schnorr_verify(msg, kp.public_key, sig));
}
BENCHMARK(BM_SchnorrVerify);

void BM_EventId(benchmark::State& state) {
  nostr::EventTemplate t;
  t.pubkey = bench_key().public_key_hex();
  t.created_at = 1700000000;
  t.kind = 8000;
  t.tags = {{"param", "task", "inner"}, {"param", "run option", "fedavg"},
            {"p", std::string(64, 'a')}};
  t.content = "";
  for (auto _ : state) benchmark::DoNotOptimize(nostr::compute_event_id(t));
}
BENCHMARK(BM_EventId);

void BM_SerializeParams(benchmark::State& state) {
  ml::ModelParams p;
  p.layout = {{"w0", {1, static_cast<std::uint32_t>(state.range(0))}}, {"b0", {1}}};
  Rng rng(2);
  p.values.resize(static_cast<std::size_t>(state.range(0)) + 1);
  for (auto& v : p.values) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(ml::serialize_params(p));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(p.values.size() * 8));
}
BENCHMARK(BM_SerializeParams)->Arg(1000)->Arg(50000);

void BM_OuterFedavg(benchmark::State& state) {
  ml::ModelSpec spec;
  spec.family = ml::ModelFamily::kLinearRegression;
  spec.input_dim = static_cast<int>(state.range(0));
  Rng rng(3);
  std::vector<ml::ModelParams> inner;
  for (int k = 0; k < 5; ++k) {
    auto p = ml::init_model(spec);
    for (auto& v : p.values) v = rng.normal();
    inner.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(ml::outer_fedavg(inner));
}
BENCHMARK(BM_OuterFedavg)->Arg(1000)->Arg(50000);

void BM_InnerEpoch(benchmark::State& state) {
  ml::ModelSpec spec;
  spec.family = ml::ModelFamily::kLinearRegression;
  spec.input_dim = 10;
  auto data = ml::make_synthetic_linear(static_cast<std::size_t>(state.range(0)), 10,
                                        0.1, 4);
  auto theta = ml::init_model(spec);
  ml::InnerHyperparams hp;
  hp.epochs = 1;
  hp.batch_size = 32;
  hp.learning_rate = 0.02;
  ml::LossSpec mse{ml::LossKind::kMse};
  for (auto _ : state)
    benchmark::DoNotOptimize(
        ml::inner_optimize(theta, spec, mse, data, RunOption::kFedAvg, hp));
}
BENCHMARK(BM_InnerEpoch)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
