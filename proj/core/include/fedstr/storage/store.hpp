#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fedstr/marketplace_types.hpp"
#include "fedstr/util/hex.hpp"

namespace fedstr::storage {

// Transport for opaque blobs addressed by URL. Integrity checking lives
// above the backend so coordination code never branches on backend type.
class StorageBackend {
 public:
  virtual ~StorageBackend() = default;
  virtual bool handles(const std::string& url) const = 0;
  // Stores bytes under `filename`, returns the resulting URL.
  virtual std::string put(const Bytes& data, const std::string& filename) = 0;
  // Throws NotFoundError / StorageError.
  virtual Bytes get(const std::string& url) = 0;
};

// file:// URLs under a root directory; writes are atomic (temp + rename).
class FileBackend : public StorageBackend {
 public:
  explicit FileBackend(std::string root);
  bool handles(const std::string& url) const override;
  std::string put(const Bytes& data, const std::string& filename) override;
  Bytes get(const std::string& url) override;

  const std::string& root() const { return root_; }
  static std::string path_from_url(const std::string& url);  // throws StorageError

 private:
  std::string root_;
};

// Plain HTTP GET/PUT against a base URL (e.g. a storage service).
class HttpBackend : public StorageBackend {
 public:
  explicit HttpBackend(std::string base_url,
                       std::size_t max_blob_bytes = kDefaultMaxBlobBytes);
  bool handles(const std::string& url) const override;
  std::string put(const Bytes& data, const std::string& filename) override;
  Bytes get(const std::string& url) override;

  // No maximum blob size is inherent to the protocol; this guards the client.
  static constexpr std::size_t kDefaultMaxBlobBytes = 256ull * 1024 * 1024;

 private:
  std::string base_url_;
  std::size_t max_blob_bytes_;
};

// Content-addressed model storage: put names blobs model_<sha256>.bin, get
// verifies the digest on every read regardless of backend.
class Storage {
 public:
  Storage(std::shared_ptr<StorageBackend> write_backend,
          std::vector<std::shared_ptr<StorageBackend>> read_backends = {});

  static Storage local(const std::string& root);

  StorageRef put_model(const Bytes& blob);        // throws StorageError on empty blob
  Bytes get_model(const StorageRef& ref);         // throws IntegrityError / NotFoundError

  // Uncached side files (dataset shards etc). No digest enforcement; model
  // integrity is what the protocol guarantees.
  std::string put_blob(const Bytes& data, const std::string& filename);
  Bytes get_blob(const std::string& url);

 private:
  StorageBackend& backend_for(const std::string& url);

  std::shared_ptr<StorageBackend> write_backend_;
  std::vector<std::shared_ptr<StorageBackend>> read_backends_;
};

// Default storage root: $FEDSTR_MODEL_ROOT or ./fedstr_models.
std::string default_storage_root();

}  // namespace fedstr::storage
