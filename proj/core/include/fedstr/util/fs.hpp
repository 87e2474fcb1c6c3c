#pragma once

#include <string>

#include "fedstr/util/hex.hpp"

namespace fedstr {

Bytes read_file(const std::string& path);         // throws NotFoundError / StorageError
std::string read_text_file(const std::string& path);

// Write-temp-then-rename so concurrent readers never see partial content.
void write_file_atomic(const std::string& path, const Bytes& data);
void write_file_atomic(const std::string& path, const std::string& data);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace fedstr
