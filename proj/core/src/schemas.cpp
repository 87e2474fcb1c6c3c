#include "fedstr/events/schemas.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>

#include "fedstr/errors.hpp"
#include "fedstr/util/hex.hpp"
#include "json.hpp"

using nlohmann::json;

namespace fedstr {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(::tolower(c));
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "0";
  return std::string(buf, ptr);
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_i64(const std::string& s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string task_to_wire(Task t) { return t == Task::kInner ? "inner" : "outer"; }

std::optional<Task> task_from_wire(const std::string& s) {
  auto l = lower(s);
  if (l == "inner") return Task::kInner;
  if (l == "outer") return Task::kOuter;
  return std::nullopt;
}

std::string run_option_to_wire(RunOption r) {
  return r == RunOption::kFedAvg ? "fedavg" : "diloco";
}

std::optional<RunOption> run_option_from_wire(const std::string& s) {
  auto l = lower(s);
  if (l == "fedavg") return RunOption::kFedAvg;
  if (l == "diloco") return RunOption::kDiLoCo;
  return std::nullopt;
}

std::string StorageRef::to_wire() const { return "url:" + url + ";sha256:" + sha256; }

std::optional<StorageRef> StorageRef::from_wire(const std::string& s) {
  if (s.rfind("url:", 0) != 0) return std::nullopt;
  auto marker = s.rfind(";sha256:");
  if (marker == std::string::npos) return std::nullopt;
  StorageRef ref;
  ref.url = s.substr(4, marker - 4);
  ref.sha256 = s.substr(marker + 8);
  if (!is_hex(ref.sha256, 64)) return std::nullopt;
  return ref;
}

namespace events {

namespace {

using nostr::Event;
using nostr::EventTemplate;
using nostr::Tags;

// Single tag named `name`; throws on duplicates, returns nullptr when absent.
const std::vector<std::string>* find_unique_tag(const Event& e, const std::string& name,
                                                bool required) {
  const std::vector<std::string>* found = nullptr;
  for (const auto& tag : e.tags) {
    if (tag.empty() || tag[0] != name) continue;
    if (found) throw SchemaError("duplicate tag: " + name);
    found = &tag;
  }
  if (!found && required) throw SchemaError("missing tag: " + name);
  return found;
}

std::int64_t stamp(std::int64_t created_at) {
  return created_at ? created_at : nostr::unix_now();
}

constexpr const char* kKnownParams[] = {
    "task",
    "run option",
    "data_set",
    "initial/current-model-state",
    "model",
    "source_code",
    "expected_execution_time",
    "recommended_hardware_specification",
    "validation_rules_for_the_output",
    "timeout-specification",
};

bool is_known_param(const std::string& name) {
  return std::find_if(std::begin(kKnownParams), std::end(kKnownParams),
                      [&](const char* p) { return name == p; }) !=
         std::end(kKnownParams);
}

void push_param(Tags& tags, const std::string& name, const std::string& value) {
  tags.push_back({"param", name, value});
}

}  // namespace

std::string input_type_to_wire(InputType t) {
  switch (t) {
    case InputType::kUrl: return "url";
    case InputType::kEvent: return "event";
    case InputType::kJob: return "job";
    case InputType::kText: return "text";
  }
  return "url";
}

std::optional<InputType> input_type_from_wire(const std::string& s) {
  auto l = lower(s);
  if (l == "url") return InputType::kUrl;
  if (l == "event") return InputType::kEvent;
  if (l == "job") return InputType::kJob;
  if (l == "text") return InputType::kText;
  return std::nullopt;
}

std::string ModelState::to_wire() const {
  if (ref) return ref->to_wire();
  return inline_data;
}

ModelState ModelState::from_wire(const std::string& s) {
  ModelState state;
  if (auto ref = StorageRef::from_wire(s)) {
    state.ref = *ref;
  } else {
    state.inline_data = s;
  }
  return state;
}

std::string feedback_status_to_wire(FeedbackStatus s) {
  switch (s) {
    case FeedbackStatus::kPaymentRequired: return "payment-required";
    case FeedbackStatus::kProcessing: return "processing";
    case FeedbackStatus::kError: return "error";
    case FeedbackStatus::kSuccess: return "success";
    case FeedbackStatus::kPartial: return "partial";
  }
  return "error";
}

std::optional<FeedbackStatus> feedback_status_from_wire(const std::string& s) {
  if (s == "payment-required") return FeedbackStatus::kPaymentRequired;
  if (s == "processing") return FeedbackStatus::kProcessing;
  if (s == "error") return FeedbackStatus::kError;
  if (s == "success") return FeedbackStatus::kSuccess;
  if (s == "partial") return FeedbackStatus::kPartial;
  return std::nullopt;
}

std::optional<std::string> find_extra_param(const JobRequest& req,
                                            const std::string& name) {
  for (const auto& [k, v] : req.extra_params)
    if (k == name) return v;
  return std::nullopt;
}

nostr::Event build_job_request(const JobRequest& req, const Keypair& signer,
                               std::int64_t created_at) {
  if (req.kind < kinds::kJobRequestMin || req.kind > kinds::kJobRequestMax)
    throw SchemaError("job request kind out of band: " + std::to_string(req.kind));
  if (req.inputs.size() != 1)
    throw SchemaError("job request needs exactly one primary input, got " +
                      std::to_string(req.inputs.size()));
  const JobInput& input = req.inputs.front();
  if (input.type == InputType::kJob && !is_hex(input.data, 64))
    throw SchemaError("job-type input must carry a 64-hex prior job event id");
  if (!req.model_state.is_ref() &&
      req.model_state.inline_data.size() > ModelState::kMaxInlineBytes)
    throw SchemaError("inline model state exceeds 64 KiB; use a storage ref");

  Tags tags;
  {
    std::vector<std::string> i_tag{"i", input.data, input_type_to_wire(input.type)};
    if (!input.relay_hint.empty() || !input.marker.empty())
      i_tag.push_back(input.relay_hint);
    if (!input.marker.empty()) i_tag.push_back(input.marker);
    tags.push_back(std::move(i_tag));
  }
  tags.push_back({"output", req.output_spec});
  if (!req.relays.empty()) {
    std::vector<std::string> relays_tag{"relays"};
    relays_tag.insert(relays_tag.end(), req.relays.begin(), req.relays.end());
    tags.push_back(std::move(relays_tag));
  }
  if (req.bid_msats) tags.push_back({"bid", std::to_string(*req.bid_msats)});
  for (const auto& p : req.providers) tags.push_back({"p", p});
  push_param(tags, "task", task_to_wire(req.task));
  push_param(tags, "run option", run_option_to_wire(req.run_option));
  if (!req.data_set_url.empty()) push_param(tags, "data_set", req.data_set_url);
  {
    auto wire = req.model_state.to_wire();
    if (!wire.empty()) push_param(tags, "initial/current-model-state", wire);
  }
  if (!req.model_spec.empty()) push_param(tags, "model", req.model_spec);
  if (!req.source_code_url.empty()) push_param(tags, "source_code", req.source_code_url);
  if (req.expected_execution_time > 0)
    push_param(tags, "expected_execution_time",
               std::to_string(req.expected_execution_time));
  if (!req.hardware_spec.empty())
    push_param(tags, "recommended_hardware_specification", req.hardware_spec);
  if (!req.validation_rules_url.empty())
    push_param(tags, "validation_rules_for_the_output", req.validation_rules_url);
  if (req.timeout_max > 0)
    push_param(tags, "timeout-specification", std::to_string(req.timeout_max));
  for (const auto& [name, value] : req.extra_params) push_param(tags, name, value);

  EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = stamp(created_at);
  t.kind = req.kind;
  t.tags = std::move(tags);
  return sign_event(t, signer);
}

JobRequest parse_job_request(const nostr::Event& e) {
  if (e.kind < kinds::kJobRequestMin || e.kind > kinds::kJobRequestMax)
    throw SchemaError("wrong kind for job request: " + std::to_string(e.kind));

  JobRequest req;
  req.kind = e.kind;

  const auto* i_tag = find_unique_tag(e, "i", /*required=*/true);
  if (i_tag->size() < 3) throw SchemaError("malformed tag: i (need data and input-type)");
  JobInput input;
  input.data = (*i_tag)[1];
  auto type = input_type_from_wire((*i_tag)[2]);
  if (!type) throw SchemaError("unknown input type: " + (*i_tag)[2]);
  input.type = *type;
  if (i_tag->size() >= 4) input.relay_hint = (*i_tag)[3];
  if (i_tag->size() >= 5) input.marker = (*i_tag)[4];
  if (input.type == InputType::kJob && !is_hex(input.data, 64))
    throw SchemaError("malformed tag: i (job input must be a 64-hex event id)");
  req.inputs.push_back(std::move(input));

  if (const auto* output = find_unique_tag(e, "output", /*required=*/true))
    req.output_spec = output->size() >= 2 ? (*output)[1] : "";

  if (const auto* relays = find_unique_tag(e, "relays", /*required=*/false))
    req.relays.assign(relays->begin() + 1, relays->end());

  if (const auto* bid = find_unique_tag(e, "bid", /*required=*/false)) {
    if (bid->size() < 2) throw SchemaError("malformed tag: bid");
    auto v = parse_u64((*bid)[1]);
    if (!v) throw SchemaError("malformed tag: bid (not a msat amount)");
    req.bid_msats = *v;
  }

  for (const auto* p : e.tags_named("p")) {
    if (p->size() < 2) throw SchemaError("malformed tag: p");
    req.providers.push_back((*p)[1]);
  }

  bool saw_task = false;
  bool saw_run_option = false;
  std::vector<std::string> seen_known;
  for (const auto* tag : e.tags_named("param")) {
    if (tag->size() < 3) throw SchemaError("malformed tag: param");
    const std::string& name = (*tag)[1];
    const std::string& value = (*tag)[2];
    if (is_known_param(name)) {
      if (std::find(seen_known.begin(), seen_known.end(), name) != seen_known.end())
        throw SchemaError("duplicate param: " + name);
      seen_known.push_back(name);
    }
    if (name == "task") {
      auto task = task_from_wire(value);
      if (!task) throw SchemaError("unknown task: " + value);
      req.task = *task;
      saw_task = true;
    } else if (name == "run option") {
      auto run = run_option_from_wire(value);
      if (!run) throw SchemaError("unknown run option: " + value);
      req.run_option = *run;
      saw_run_option = true;
    } else if (name == "data_set") {
      req.data_set_url = value;
    } else if (name == "initial/current-model-state") {
      req.model_state = ModelState::from_wire(value);
    } else if (name == "model") {
      req.model_spec = value;
    } else if (name == "source_code") {
      req.source_code_url = value;
    } else if (name == "expected_execution_time") {
      auto v = parse_i64(value);
      if (!v) throw SchemaError("malformed param: expected_execution_time");
      req.expected_execution_time = *v;
    } else if (name == "recommended_hardware_specification") {
      req.hardware_spec = value;
    } else if (name == "validation_rules_for_the_output") {
      req.validation_rules_url = value;
    } else if (name == "timeout-specification") {
      auto v = parse_i64(value);
      if (!v) throw SchemaError("malformed param: timeout-specification");
      req.timeout_max = *v;
    } else {
      req.extra_params.emplace_back(name, value);
    }
  }
  if (!saw_task) throw SchemaError("missing param: task");
  if (!saw_run_option) throw SchemaError("missing param: run option");
  return req;
}

nostr::Event build_feedback(const JobFeedback& fb, const Keypair& signer,
                            std::int64_t created_at) {
  if (fb.job_request_id.empty()) throw SchemaError("feedback needs a job request id");
  if (fb.customer_pubkey.empty()) throw SchemaError("feedback needs a customer pubkey");

  Tags tags;
  tags.push_back({"status", feedback_status_to_wire(fb.status), fb.extra_info});
  if (fb.amount_msats) {
    std::vector<std::string> amount{"amount", std::to_string(*fb.amount_msats)};
    if (fb.bolt11) amount.push_back(*fb.bolt11);
    tags.push_back(std::move(amount));
  }
  {
    std::vector<std::string> e_tag{"e", fb.job_request_id};
    if (!fb.relay_hint.empty()) e_tag.push_back(fb.relay_hint);
    tags.push_back(std::move(e_tag));
  }
  tags.push_back({"p", fb.customer_pubkey});

  EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = stamp(created_at);
  t.kind = kinds::kJobFeedback;
  t.tags = std::move(tags);
  t.content = fb.payload;
  return sign_event(t, signer);
}

JobFeedback parse_feedback(const nostr::Event& e) {
  if (e.kind != kinds::kJobFeedback)
    throw SchemaError("wrong kind for job feedback: " + std::to_string(e.kind));

  JobFeedback fb;
  const auto* status = find_unique_tag(e, "status", /*required=*/true);
  if (status->size() < 2) throw SchemaError("malformed tag: status");
  auto parsed = feedback_status_from_wire((*status)[1]);
  if (!parsed) throw SchemaError("unknown status: " + (*status)[1]);
  fb.status = *parsed;
  if (status->size() >= 3) fb.extra_info = (*status)[2];

  if (const auto* amount = find_unique_tag(e, "amount", /*required=*/false)) {
    if (amount->size() < 2) throw SchemaError("malformed tag: amount");
    auto v = parse_u64((*amount)[1]);
    if (!v) throw SchemaError("malformed tag: amount (not a msat amount)");
    fb.amount_msats = *v;
    if (amount->size() >= 3) fb.bolt11 = (*amount)[2];
  }

  const auto* e_tag = find_unique_tag(e, "e", /*required=*/true);
  if (e_tag->size() < 2) throw SchemaError("malformed tag: e");
  fb.job_request_id = (*e_tag)[1];
  if (e_tag->size() >= 3) fb.relay_hint = (*e_tag)[2];

  const auto* p_tag = find_unique_tag(e, "p", /*required=*/true);
  if (p_tag->size() < 2) throw SchemaError("malformed tag: p");
  fb.customer_pubkey = (*p_tag)[1];

  fb.payload = e.content;
  return fb;
}

namespace {

std::string output_tag_value(const StorageRef& ref, double loss) {
  return ref.to_wire() + ";loss:" + format_double(loss);
}

void parse_output_tag(const std::string& value, StorageRef& ref, double& loss) {
  auto loss_marker = value.rfind(";loss:");
  if (loss_marker == std::string::npos)
    throw SchemaError("malformed tag: output (missing loss)");
  auto parsed_loss = parse_double(value.substr(loss_marker + 6));
  if (!parsed_loss) throw SchemaError("malformed tag: output (bad loss)");
  auto parsed_ref = StorageRef::from_wire(value.substr(0, loss_marker));
  if (!parsed_ref)
    throw SchemaError("malformed tag: output (bad url/sha256 reference)");
  ref = *parsed_ref;
  loss = *parsed_loss;
}

}  // namespace

nostr::Event build_job_result(const JobResult& result, const Keypair& signer,
                              std::int64_t created_at) {
  if (result.kind < kinds::kJobResultMin || result.kind > kinds::kJobResultMax)
    throw SchemaError("job result kind out of band: " + std::to_string(result.kind));
  if (result.job_request_id.empty()) throw SchemaError("result needs a job request id");
  if (!is_hex(result.output.sha256, 64))
    throw SchemaError("result output needs a 64-hex sha256 digest");

  Tags tags;
  tags.push_back({"request", result.request_json});
  {
    std::vector<std::string> e_tag{"e", result.job_request_id};
    if (!result.relay_hint.empty()) e_tag.push_back(result.relay_hint);
    tags.push_back(std::move(e_tag));
  }
  tags.push_back({"p", result.customer_pubkey});
  if (result.amount_msats) {
    std::vector<std::string> amount{"amount", std::to_string(*result.amount_msats)};
    if (result.bolt11) amount.push_back(*result.bolt11);
    tags.push_back(std::move(amount));
  }
  for (const auto& [label, value] : result.info) tags.push_back({"i", label, value});
  tags.push_back({"output", output_tag_value(result.output, result.reported_loss)});
  if (result.file_metadata_event_id)
    tags.push_back({"e", *result.file_metadata_event_id, result.relay_hint,
                    "file-metadata"});

  EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = stamp(created_at);
  t.kind = result.kind;
  t.tags = std::move(tags);
  return sign_event(t, signer);
}

JobResult parse_job_result(const nostr::Event& e) {
  if (e.kind < kinds::kJobResultMin || e.kind > kinds::kJobResultMax)
    throw SchemaError("wrong kind for job result: " + std::to_string(e.kind));

  JobResult result;
  result.kind = e.kind;

  const auto* request = find_unique_tag(e, "request", /*required=*/true);
  if (request->size() < 2) throw SchemaError("malformed tag: request");
  result.request_json = (*request)[1];

  bool saw_primary_e = false;
  for (const auto* tag : e.tags_named("e")) {
    if (tag->size() < 2) throw SchemaError("malformed tag: e");
    if (tag->size() >= 4 && (*tag)[3] == "file-metadata") {
      if (result.file_metadata_event_id) throw SchemaError("duplicate tag: e (file-metadata)");
      result.file_metadata_event_id = (*tag)[1];
      continue;
    }
    if (saw_primary_e) throw SchemaError("duplicate tag: e");
    saw_primary_e = true;
    result.job_request_id = (*tag)[1];
    if (tag->size() >= 3) result.relay_hint = (*tag)[2];
  }
  if (!saw_primary_e) throw SchemaError("missing tag: e");

  const auto* p_tag = find_unique_tag(e, "p", /*required=*/true);
  if (p_tag->size() < 2) throw SchemaError("malformed tag: p");
  result.customer_pubkey = (*p_tag)[1];

  if (const auto* amount = find_unique_tag(e, "amount", /*required=*/false)) {
    if (amount->size() < 2) throw SchemaError("malformed tag: amount");
    auto v = parse_u64((*amount)[1]);
    if (!v) throw SchemaError("malformed tag: amount (not a msat amount)");
    result.amount_msats = *v;
    if (amount->size() >= 3) result.bolt11 = (*amount)[2];
  }

  for (const auto* tag : e.tags_named("i")) {
    if (tag->size() < 3) throw SchemaError("malformed tag: i");
    result.info.emplace_back((*tag)[1], (*tag)[2]);
  }

  const auto* output = find_unique_tag(e, "output", /*required=*/true);
  if (output->size() < 2) throw SchemaError("malformed tag: output");
  parse_output_tag((*output)[1], result.output, result.reported_loss);
  return result;
}

nostr::Event build_discoverability(const Discoverability& d, const Keypair& signer,
                                   std::int64_t created_at) {
  Tags tags;
  for (int kind : d.supported_kinds) tags.push_back({"k", std::to_string(kind)});
  tags.push_back({"t", "bitcoin"});
  for (const auto& spec : d.specs)
    tags.push_back({"i", "specifications", spec.hardware, spec.max_execution_time,
                    spec.model_dimensions_range});

  EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = stamp(created_at);
  t.kind = kinds::kDiscoverability;
  t.tags = std::move(tags);
  t.content = json{{"name", d.name}, {"about", d.about}}.dump();
  return sign_event(t, signer);
}

Discoverability parse_discoverability(const nostr::Event& e) {
  if (e.kind != kinds::kDiscoverability)
    throw SchemaError("wrong kind for discoverability: " + std::to_string(e.kind));

  Discoverability d;
  d.name.clear();
  json content = json::parse(e.content, nullptr, false);
  if (content.is_object()) {
    if (content.contains("name") && content["name"].is_string())
      d.name = content["name"].get<std::string>();
    if (content.contains("about") && content["about"].is_string())
      d.about = content["about"].get<std::string>();
  }
  for (const auto* tag : e.tags_named("k")) {
    if (tag->size() < 2) throw SchemaError("malformed tag: k");
    auto v = parse_i64((*tag)[1]);
    if (!v) throw SchemaError("malformed tag: k (not an integer kind)");
    d.supported_kinds.push_back(static_cast<int>(*v));
  }
  for (const auto* tag : e.tags_named("i")) {
    if (tag->size() >= 2 && (*tag)[1] == "specifications") {
      Discoverability::Spec spec;
      if (tag->size() >= 3) spec.hardware = (*tag)[2];
      if (tag->size() >= 4) spec.max_execution_time = (*tag)[3];
      if (tag->size() >= 5) spec.model_dimensions_range = (*tag)[4];
      d.specs.push_back(std::move(spec));
    }
  }
  return d;
}

nostr::Event build_file_metadata(const FileMetadata& m, const Keypair& signer,
                                 std::int64_t created_at) {
  if (!is_hex(m.sha256, 64))
    throw SchemaError("file metadata needs a 64-hex sha256 (x tag)");
  Tags tags;
  tags.push_back({"url", m.url});
  tags.push_back({"x", m.sha256});
  tags.push_back({"m", m.mime});
  tags.push_back({"size", std::to_string(m.size_bytes)});
  if (!m.alt.empty()) tags.push_back({"alt", m.alt});

  EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = stamp(created_at);
  t.kind = kinds::kFileMetadata;
  t.tags = std::move(tags);
  t.content = m.description;
  return sign_event(t, signer);
}

FileMetadata parse_file_metadata(const nostr::Event& e) {
  if (e.kind != kinds::kFileMetadata)
    throw SchemaError("wrong kind for file metadata: " + std::to_string(e.kind));

  FileMetadata m;
  const auto* url = find_unique_tag(e, "url", /*required=*/true);
  if (url->size() < 2) throw SchemaError("malformed tag: url");
  m.url = (*url)[1];

  const auto* x = find_unique_tag(e, "x", /*required=*/true);
  if (x->size() < 2 || !is_hex((*x)[1], 64))
    throw SchemaError("malformed tag: x (need 64-hex sha256)");
  m.sha256 = (*x)[1];

  if (const auto* mime = find_unique_tag(e, "m", /*required=*/false))
    m.mime = mime->size() >= 2 ? (*mime)[1] : "";

  if (const auto* size = find_unique_tag(e, "size", /*required=*/false)) {
    if (size->size() < 2) throw SchemaError("malformed tag: size");
    auto v = parse_u64((*size)[1]);
    if (!v) throw SchemaError("malformed tag: size (not an integer)");
    m.size_bytes = *v;
  }

  if (const auto* alt = find_unique_tag(e, "alt", /*required=*/false))
    m.alt = alt->size() >= 2 ? (*alt)[1] : "";

  m.description = e.content;
  return m;
}

}  // namespace events
}  // namespace fedstr
