#pragma once

#include <stdexcept>
#include <string>

namespace fedstr {

// Malformed or incomplete event schema (missing/duplicated/bad tags).
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Stored bytes do not match their content address.
struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

// Blob or resource does not exist at the given location.
struct NotFoundError : std::runtime_error {
  explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

// Backend write/read failure unrelated to content addressing.
struct StorageError : std::runtime_error {
  explicit StorageError(const std::string& what) : std::runtime_error(what) {}
};

// Bad serialized parameter blob (magic/version/truncation).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct CryptoError : std::runtime_error {
  explicit CryptoError(const std::string& what) : std::runtime_error(what) {}
};

// Relay transport or protocol failure.
struct RelayError : std::runtime_error {
  explicit RelayError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedstr
