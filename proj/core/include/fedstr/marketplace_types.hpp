#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace fedstr {

enum class Task { kInner, kOuter };
enum class RunOption { kFedAvg, kDiLoCo };

std::string task_to_wire(Task t);
std::optional<Task> task_from_wire(const std::string& s);  // case-insensitive

std::string run_option_to_wire(RunOption r);
std::optional<RunOption> run_option_from_wire(const std::string& s);

// Content-addressed handle to a stored blob.
struct StorageRef {
  std::string url;
  std::string sha256;  // 64 lowercase hex chars
  std::uint64_t size_bytes = 0;

  bool operator==(const StorageRef& other) const {
    return url == other.url && sha256 == other.sha256;
  }

  // Wire form used inside event tags: "url:<url>;sha256:<hex>"
  std::string to_wire() const;
  static std::optional<StorageRef> from_wire(const std::string& s);
};

// NIP-90 style event kind bands.
namespace kinds {
constexpr int kJobRequestMin = 8000;
constexpr int kJobRequestMax = 8999;
constexpr int kJobResultMin = 6000;
constexpr int kJobResultMax = 6999;
constexpr int kJobFeedback = 7000;
constexpr int kDiscoverability = 31990;
constexpr int kFileMetadata = 1063;
constexpr int kZapRequest = 9734;
constexpr int kZapReceipt = 9735;

// A request of kind 8000+k is answered by a result of kind 6000+k.
inline int result_kind_for_request(int request_kind) { return request_kind - 2000; }
inline int request_kind_for_result(int result_kind) { return result_kind + 2000; }
}  // namespace kinds

}  // namespace fedstr
