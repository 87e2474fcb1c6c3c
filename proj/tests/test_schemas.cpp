#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedstr/errors.hpp"
#include "fedstr/events/schemas.hpp"
#include "fedstr/util/rng.hpp"

using namespace fedstr;
using namespace fedstr::events;

namespace {

Keypair signer() {
  SecretKey sk{};
  sk.fill(0x51);
  sk[0] = 0;
  return generate_keypair(sk);
}

std::string hex64(char c) { return std::string(64, c); }

JobRequest sample_request() {
  JobRequest r;
  r.kind = 8000;
  r.inputs = {{"file:///tmp/shard0.csv", InputType::kUrl, "ws://local", "data"}};
  r.output_spec = "model-parameters";
  r.relays = {"ws://127.0.0.1:7777"};
  r.bid_msats = 1000;
  r.providers = {hex64('a')};
  r.task = Task::kInner;
  r.run_option = RunOption::kFedAvg;
  r.data_set_url = "file:///tmp/shard0.csv";
  r.model_state.ref = StorageRef{"file:///tmp/model_abc.bin", hex64('b'), 0};
  r.model_spec = "family=linear;in=10;out=1;seed=7";
  r.source_code_url = "https://example.org/trainer";
  r.expected_execution_time = 60;
  r.hardware_spec = "cpu, 4 cores";
  r.validation_rules_url = "https://example.org/rules";
  r.timeout_max = 120;
  r.extra_params = {{"round", "2"}, {"hyperparams", "E=3;bs=32;lr=0.02"}};
  return r;
}

}  // namespace

TEST_CASE("job request round trip and tag shape") {
  auto kp = signer();
  auto req = sample_request();
  auto event = build_job_request(req, kp, 1700000000);
  CHECK(event.kind == 8000);

  // the documented param tags are present with their exact wire names
  bool saw_task = false, saw_run = false, saw_data = false;
  for (const auto& tag : event.tags) {
    if (tag.size() >= 3 && tag[0] == "param" && tag[1] == "task" && tag[2] == "inner")
      saw_task = true;
    if (tag.size() >= 3 && tag[0] == "param" && tag[1] == "run option" &&
        tag[2] == "fedavg")
      saw_run = true;
    if (tag.size() >= 3 && tag[0] == "param" && tag[1] == "data_set") saw_data = true;
  }
  CHECK(saw_task);
  CHECK(saw_run);
  CHECK(saw_data);

  auto parsed = parse_job_request(event);
  CHECK(parsed == req);
}

TEST_CASE("job request validation errors") {
  auto kp = signer();
  auto req = sample_request();

  SUBCASE("kind out of band") {
    req.kind = 5000;
    CHECK_THROWS_AS(build_job_request(req, kp), SchemaError);
  }
  SUBCASE("wrong kind fed to parser") {
    auto e = build_job_request(sample_request(), kp);
    e.kind = 5000;  // unsigned mutation; parser checks kind before anything else
    CHECK_THROWS_WITH_AS(parse_job_request(e),
                         doctest::Contains("wrong kind"), SchemaError);
  }
  SUBCASE("two inputs rejected") {
    req.inputs.push_back(req.inputs[0]);
    CHECK_THROWS_AS(build_job_request(req, kp), SchemaError);
  }
  SUBCASE("job input must carry an event id") {
    req.inputs = {{"not-an-id", InputType::kJob, "", ""}};
    CHECK_THROWS_AS(build_job_request(req, kp), SchemaError);
  }
  SUBCASE("job chaining input accepted") {
    req.inputs = {{hex64('e'), InputType::kJob, "ws://r", "prior-round"}};
    auto event = build_job_request(req, kp);
    auto parsed = parse_job_request(event);
    CHECK(parsed.inputs[0].type == InputType::kJob);
    CHECK(parsed.inputs[0].data == hex64('e'));
  }
  SUBCASE("oversized inline model state rejected") {
    req.model_state.ref.reset();
    req.model_state.inline_data = std::string(65 * 1024, 'x');
    CHECK_THROWS_AS(build_job_request(req, kp), SchemaError);
  }
  SUBCASE("missing task param named in error") {
    auto event = build_job_request(sample_request(), kp);
    nostr::Tags kept;
    for (auto& tag : event.tags)
      if (!(tag.size() >= 2 && tag[0] == "param" && tag[1] == "task"))
        kept.push_back(tag);
    event.tags = kept;
    CHECK_THROWS_WITH_AS(parse_job_request(event), doctest::Contains("task"),
                         SchemaError);
  }
  SUBCASE("unknown params survive round trip in order") {
    auto event = build_job_request(req, kp);
    auto parsed = parse_job_request(event);
    REQUIRE(parsed.extra_params.size() == 2);
    CHECK(parsed.extra_params[0] == std::make_pair(std::string("round"), std::string("2")));
  }
}

TEST_CASE("feedback round trip with wire status names") {
  auto kp = signer();
  JobFeedback fb;
  fb.status = FeedbackStatus::kPaymentRequired;
  fb.extra_info = "pay first";
  fb.amount_msats = 1000;
  fb.bolt11 = "lnstub11000m00aa00aa00aa00aa";
  fb.job_request_id = hex64('c');
  fb.relay_hint = "ws://r";
  fb.customer_pubkey = hex64('d');
  fb.payload = "sample";

  auto event = build_feedback(fb, kp, 1700000001);
  CHECK(event.kind == 7000);
  bool saw_status = false, saw_amount = false;
  for (const auto& tag : event.tags) {
    if (tag.size() >= 2 && tag[0] == "status" && tag[1] == "payment-required")
      saw_status = true;
    if (tag.size() >= 2 && tag[0] == "amount" && tag[1] == "1000") saw_amount = true;
  }
  CHECK(saw_status);
  CHECK(saw_amount);
  CHECK(parse_feedback(event) == fb);
}

TEST_CASE("feedback parser strictness") {
  auto kp = signer();
  JobFeedback fb;
  fb.status = FeedbackStatus::kSuccess;
  fb.job_request_id = hex64('c');
  fb.customer_pubkey = hex64('d');
  auto event = build_feedback(fb, kp);

  SUBCASE("unknown status string") {
    for (auto& tag : event.tags)
      if (tag[0] == "status") tag[1] = "paused";
    CHECK_THROWS_WITH_AS(parse_feedback(event), doctest::Contains("paused"), SchemaError);
  }
  SUBCASE("wrong kind") {
    event.kind = 7001;
    CHECK_THROWS_AS(parse_feedback(event), SchemaError);
  }
  SUBCASE("duplicate status tag") {
    event.tags.push_back({"status", "processing", ""});
    CHECK_THROWS_WITH_AS(parse_feedback(event), doctest::Contains("duplicate"),
                         SchemaError);
  }
  SUBCASE("missing e tag") {
    std::erase_if(event.tags, [](const auto& tag) { return tag[0] == "e"; });
    CHECK_THROWS_WITH_AS(parse_feedback(event), doctest::Contains("e"), SchemaError);
  }
}

TEST_CASE("job result round trip carries output url, digest and loss") {
  auto kp = signer();
  JobResult r;
  r.kind = 6000;
  r.request_json = R"({"kind":8000})";
  r.job_request_id = hex64('e');
  r.relay_hint = "ws://r";
  r.customer_pubkey = hex64('f');
  r.amount_msats = 900;
  r.bolt11 = "lnstub1900m00aa00aa00aa00aa";
  r.info = {{"train-loss", "0.25"}, {"steps", "94"}};
  r.output = StorageRef{"file:///tmp/model_xyz.bin", hex64('1'), 0};
  r.reported_loss = 0.247913334190845;

  auto event = build_job_result(r, kp, 1700000002);
  auto e_tag = event.tag_value("e");
  REQUIRE(e_tag.has_value());
  CHECK(*e_tag == hex64('e'));
  auto output_tag = event.tag_value("output");
  REQUIRE(output_tag.has_value());
  CHECK(output_tag->find("url:file:///tmp/model_xyz.bin") == 0);
  CHECK(output_tag->find(";sha256:" + hex64('1')) != std::string::npos);
  CHECK(output_tag->find(";loss:") != std::string::npos);
  CHECK(parse_job_result(event) == r);
}

TEST_CASE("job result parser rejects malformed digests and missing tags") {
  auto kp = signer();
  JobResult r;
  r.kind = 6100;
  r.request_json = "{}";
  r.job_request_id = hex64('e');
  r.customer_pubkey = hex64('f');
  r.output = StorageRef{"file:///x.bin", hex64('2'), 0};
  auto event = build_job_result(r, kp);

  SUBCASE("63-char digest") {
    for (auto& tag : event.tags)
      if (tag[0] == "output")
        tag[1] = "url:file:///x.bin;sha256:" + std::string(63, '2') + ";loss:0";
    CHECK_THROWS_AS(parse_job_result(event), SchemaError);
  }
  SUBCASE("missing e tag") {
    std::erase_if(event.tags, [](const auto& tag) { return tag[0] == "e"; });
    CHECK_THROWS_WITH_AS(parse_job_result(event), doctest::Contains("e"), SchemaError);
  }
  SUBCASE("build rejects short digest up front") {
    r.output.sha256 = std::string(63, '9');
    CHECK_THROWS_AS(build_job_result(r, kp), SchemaError);
  }
  SUBCASE("nip-94 companion e tag round trips") {
    r.file_metadata_event_id = hex64('9');
    auto with_meta = build_job_result(r, kp);
    auto parsed = parse_job_result(with_meta);
    CHECK(parsed.file_metadata_event_id == hex64('9'));
    CHECK(parsed.job_request_id == hex64('e'));
  }
}

TEST_CASE("result kind convention maps request band to result band") {
  CHECK(kinds::result_kind_for_request(8000) == 6000);
  CHECK(kinds::result_kind_for_request(8421) == 6421);
  CHECK(kinds::request_kind_for_result(6421) == 8421);
}

TEST_CASE("discoverability round trip") {
  auto kp = signer();
  Discoverability d;
  d.name = "Federated Learning AI-VM";
  d.about = "trains models for sats";
  d.supported_kinds = {8000, 8001};
  d.specs = {{"gpu", "600", "1-1000000"}};

  auto event = build_discoverability(d, kp, 1700000003);
  CHECK(event.kind == 31990);
  bool saw_k = false;
  for (const auto& tag : event.tags)
    if (tag.size() >= 2 && tag[0] == "k" && tag[1] == "8000") saw_k = true;
  CHECK(saw_k);
  CHECK(parse_discoverability(event) == d);

  // no k tags: parses, unusable
  Discoverability empty;
  empty.supported_kinds = {};
  auto bare = build_discoverability(empty, kp);
  auto parsed = parse_discoverability(bare);
  CHECK(!parsed.usable());
}

TEST_CASE("file metadata round trip with the documented size tag") {
  auto kp = signer();
  FileMetadata m;
  m.url = "https://storage.example/model_abc123.bin";
  m.sha256 = hex64('3');
  m.size_bytes = 409245;
  m.alt = "trained model";
  m.description = "model parameters";

  auto event = build_file_metadata(m, kp, 1700000004);
  CHECK(event.kind == 1063);
  CHECK(event.tag_value("size").value_or("") == "409245");
  CHECK(event.tag_value("x").value_or("") == hex64('3'));
  CHECK(parse_file_metadata(event) == m);

  m.sha256 = "short";
  CHECK_THROWS_AS(build_file_metadata(m, kp), SchemaError);
}

TEST_CASE("storage ref wire form") {
  StorageRef ref{"file:///tmp/m.bin", hex64('a'), 42};
  auto wire = ref.to_wire();
  auto back = StorageRef::from_wire(wire);
  REQUIRE(back.has_value());
  CHECK(back->url == ref.url);
  CHECK(back->sha256 == ref.sha256);
  CHECK(!StorageRef::from_wire("nope"));
  CHECK(!StorageRef::from_wire("url:x;sha256:zz"));
}

// Property: random valid records round trip exactly.
TEST_CASE("schema round trip under random valid records") {
  auto kp = signer();
  Rng rng(99);
  auto rand_hex64 = [&] {
    std::string s;
    for (int i = 0; i < 64; ++i) s += "0123456789abcdef"[rng.below(16)];
    return s;
  };
  for (int i = 0; i < 200; ++i) {
    JobRequest r;
    r.kind = 8000 + static_cast<int>(rng.below(1000));
    r.task = rng.below(2) ? Task::kInner : Task::kOuter;
    r.run_option = rng.below(2) ? RunOption::kFedAvg : RunOption::kDiLoCo;
    r.inputs = {{rng.below(2) ? rand_hex64() : "file:///tmp/x.csv",
                 rng.below(2) ? InputType::kJob : InputType::kUrl, "ws://r", "m"}};
    if (r.inputs[0].type == InputType::kJob) r.inputs[0].data = rand_hex64();
    if (rng.below(2)) r.bid_msats = rng.below(100000);
    if (rng.below(2)) r.model_state.ref = StorageRef{"file:///m.bin", rand_hex64(), 0};
    else r.model_state.inline_data = "inline-" + std::to_string(rng.below(100));
    r.data_set_url = "file:///tmp/d.csv";
    r.model_spec = "family=linear;in=2;out=1;seed=0";
    if (rng.below(2)) r.extra_params.emplace_back("x-" + std::to_string(rng.below(5)),
                                                  std::to_string(rng.below(1000)));
    CHECK(parse_job_request(build_job_request(r, kp)) == r);

    JobFeedback fb;
    fb.status = static_cast<FeedbackStatus>(rng.below(5));
    fb.extra_info = "info" + std::to_string(rng.below(10));
    if (rng.below(2)) fb.amount_msats = 1 + rng.below(10000);
    fb.job_request_id = rand_hex64();
    fb.customer_pubkey = rand_hex64();
    CHECK(parse_feedback(build_feedback(fb, kp)) == fb);

    JobResult res;
    res.kind = 6000 + static_cast<int>(rng.below(1000));
    res.request_json = "{\"kind\":8000}";
    res.job_request_id = rand_hex64();
    res.customer_pubkey = rand_hex64();
    if (rng.below(2)) res.amount_msats = 1 + rng.below(10000);
    res.output = StorageRef{"file:///tmp/model.bin", rand_hex64(), 0};
    res.reported_loss = rng.uniform(-10.0, 10.0);
    CHECK(parse_job_result(build_job_result(res, kp)) == res);
  }
}
