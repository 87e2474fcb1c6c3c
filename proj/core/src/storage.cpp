#include "fedstr/storage/store.hpp"

#include <cstdlib>
#include <filesystem>

#include "fedstr/crypto/sha256.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/util/fs.hpp"
#include "httplib.h"

namespace fs = std::filesystem;

namespace fedstr::storage {

FileBackend::FileBackend(std::string root) : root_(std::move(root)) {
  ensure_dir(root_);
}

bool FileBackend::handles(const std::string& url) const {
  return url.rfind("file://", 0) == 0;
}

std::string FileBackend::path_from_url(const std::string& url) {
  if (url.rfind("file://", 0) != 0)
    throw StorageError("not a file:// url: " + url);
  return url.substr(7);
}

std::string FileBackend::put(const Bytes& data, const std::string& filename) {
  fs::path target = fs::absolute(fs::path(root_) / filename);
  write_file_atomic(target.string(), data);
  return "file://" + target.string();
}

Bytes FileBackend::get(const std::string& url) {
  return read_file(path_from_url(url));
}

namespace {

// Splits http(s)://host:port/path into (scheme://host:port, /path).
std::pair<std::string, std::string> split_http_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw StorageError("bad http url: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpBackend::HttpBackend(std::string base_url, std::size_t max_blob_bytes)
    : base_url_(std::move(base_url)), max_blob_bytes_(max_blob_bytes) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

bool HttpBackend::handles(const std::string& url) const {
  return url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0;
}

std::string HttpBackend::put(const Bytes& data, const std::string& filename) {
  std::string url = base_url_ + "/" + filename;
  auto [host, path] = split_http_url(url);
  httplib::Client client(host);
  client.set_connection_timeout(10);
  auto res = client.Put(path, reinterpret_cast<const char*>(data.data()), data.size(),
                        "application/octet-stream");
  if (!res) throw StorageError("http put failed (transport): " + url);
  if (res->status < 200 || res->status >= 300)
    throw StorageError("http put failed (" + std::to_string(res->status) + "): " + url);
  return url;
}

Bytes HttpBackend::get(const std::string& url) {
  auto [host, path] = split_http_url(url);
  httplib::Client client(host);
  client.set_connection_timeout(10);
  auto res = client.Get(path);
  if (!res) throw StorageError("http get failed (transport): " + url);
  if (res->status == 404) throw NotFoundError("blob not found: " + url);
  if (res->status < 200 || res->status >= 300)
    throw StorageError("http get failed (" + std::to_string(res->status) + "): " + url);
  if (res->body.size() > max_blob_bytes_)
    throw StorageError("blob exceeds size cap: " + url);
  return Bytes(res->body.begin(), res->body.end());
}

Storage::Storage(std::shared_ptr<StorageBackend> write_backend,
                 std::vector<std::shared_ptr<StorageBackend>> read_backends)
    : write_backend_(std::move(write_backend)), read_backends_(std::move(read_backends)) {
  if (!write_backend_) throw ConfigError("storage needs a write backend");
  read_backends_.insert(read_backends_.begin(), write_backend_);
  // Anything can read file:// and http:// by default.
  bool has_file = false, has_http = false;
  for (const auto& b : read_backends_) {
    has_file |= b->handles("file://x");
    has_http |= b->handles("http://x");
  }
  if (!has_http) read_backends_.push_back(std::make_shared<HttpBackend>(""));
  if (!has_file) read_backends_.push_back(std::make_shared<FileBackend>("."));
}

Storage Storage::local(const std::string& root) {
  return Storage(std::make_shared<FileBackend>(root));
}

StorageBackend& Storage::backend_for(const std::string& url) {
  for (const auto& b : read_backends_)
    if (b->handles(url)) return *b;
  throw StorageError("no backend handles url: " + url);
}

StorageRef Storage::put_model(const Bytes& blob) {
  if (blob.empty()) throw StorageError("refusing to store empty model blob");
  StorageRef ref;
  ref.sha256 = sha256_hex(blob);
  ref.size_bytes = blob.size();
  ref.url = write_backend_->put(blob, "model_" + ref.sha256 + ".bin");
  return ref;
}

Bytes Storage::get_model(const StorageRef& ref) {
  Bytes blob = backend_for(ref.url).get(ref.url);
  std::string digest = sha256_hex(blob);
  if (digest != ref.sha256)
    throw IntegrityError("model digest mismatch at " + ref.url + ": expected " +
                         ref.sha256 + ", got " + digest);
  return blob;
}

std::string Storage::put_blob(const Bytes& data, const std::string& filename) {
  return write_backend_->put(data, filename);
}

Bytes Storage::get_blob(const std::string& url) { return backend_for(url).get(url); }

std::string default_storage_root() {
  if (const char* env = std::getenv("FEDSTR_MODEL_ROOT"); env && *env)
    return env;
  return "./fedstr_models";
}

}  // namespace fedstr::storage
