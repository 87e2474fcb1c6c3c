#include "fedstr/util/fs.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fedstr/errors.hpp"

namespace fs = std::filesystem;

namespace fedstr {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open file: " + path);
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw StorageError("read failed: " + path);
  return data;
}

std::string read_text_file(const std::string& path) {
  Bytes raw = read_file(path);
  return std::string(raw.begin(), raw.end());
}

void write_file_atomic(const std::string& path, const Bytes& data) {
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open for write: " + tmp);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw StorageError("write failed: " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw StorageError("rename failed: " + path + ": " + ec.message());
  }
}

void write_file_atomic(const std::string& path, const std::string& data) {
  write_file_atomic(path, Bytes(data.begin(), data.end()));
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec && !fs::is_directory(path)) throw StorageError("cannot create dir: " + path);
}

}  // namespace fedstr
