#include "dgs/blob_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dgs/case_store.hpp"

namespace dgs::blob {
namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

std::filesystem::path blob_path(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".bin");
}

template <typename T>
Entry write_raw(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::size_t>& shape, const T* data, DType dtype) {
  Entry e{name, shape, dtype, element_count(shape) * sizeof(T)};
  std::ofstream out(blob_path(dir, name), std::ios::binary | std::ios::trunc);
  if (!out) throw CaseError(CaseError::Kind::InvalidInput, "cannot open blob for writing: " + blob_path(dir, name).string());
  const std::size_t n = element_count(shape);
  std::vector<T> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = to_little(data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(e.byte_length));
  if (!out) throw CaseError(CaseError::Kind::InvalidInput, "short write: " + blob_path(dir, name).string());
  return e;
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& dir, const Entry& e, DType expected) {
  const auto path = blob_path(dir, e.name);
  if (!std::filesystem::exists(path)) {
    throw CaseError(CaseError::Kind::MissingBlob, "missing blob '" + e.name + "' at " + path.string());
  }
  if (e.dtype != expected) {
    throw CaseError(CaseError::Kind::BadManifest, "blob '" + e.name + "' has unexpected dtype");
  }
  const std::size_t n = element_count(e.shape);
  if (e.byte_length != n * sizeof(T)) {
    throw CaseError(CaseError::Kind::ShapeMismatch,
                    "blob '" + e.name + "': manifest byte_length " + std::to_string(e.byte_length) +
                        " does not match shape (" + std::to_string(n * sizeof(T)) + " bytes)");
  }
  const auto size = std::filesystem::file_size(path);
  if (size != e.byte_length) {
    throw CaseError(CaseError::Kind::ShapeMismatch,
                    "blob '" + e.name + "': file holds " + std::to_string(size) + " bytes, manifest declares " +
                        std::to_string(e.byte_length));
  }
  std::vector<T> buf(n);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(e.byte_length));
  if (!in) throw CaseError(CaseError::Kind::MissingBlob, "failed reading blob '" + e.name + "'");
  for (auto& v : buf) v = to_little(v);
  return buf;
}

}  // namespace

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::size_t element_size(DType dtype) { return dtype == DType::F64 ? 8 : 4; }

Entry write_f64(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::size_t>& shape, const double* data) {
  return write_raw(dir, name, shape, data, DType::F64);
}

Entry write_u32(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::size_t>& shape, const std::uint32_t* data) {
  return write_raw(dir, name, shape, data, DType::U32);
}

std::vector<double> read_f64(const std::filesystem::path& dir, const Entry& entry) {
  return read_raw<double>(dir, entry, DType::F64);
}

std::vector<std::uint32_t> read_u32(const std::filesystem::path& dir, const Entry& entry) {
  return read_raw<std::uint32_t>(dir, entry, DType::U32);
}

nlohmann::json to_json(const Entry& e) {
  return {{"name", e.name},
          {"shape", e.shape},
          {"dtype", e.dtype == DType::F64 ? "f64" : "u32"},
          {"byte_length", e.byte_length}};
}

Entry entry_from_json(const nlohmann::json& j) {
  try {
    Entry e;
    e.name = j.at("name").get<std::string>();
    e.shape = j.at("shape").get<std::vector<std::size_t>>();
    const auto dt = j.at("dtype").get<std::string>();
    if (dt == "f64") {
      e.dtype = DType::F64;
    } else if (dt == "u32") {
      e.dtype = DType::U32;
    } else {
      throw CaseError(CaseError::Kind::BadManifest, "unknown dtype '" + dt + "'");
    }
    e.byte_length = j.at("byte_length").get<std::size_t>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, std::string("malformed blob entry: ") + ex.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CaseError(CaseError::Kind::InvalidInput, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseError(CaseError::Kind::MissingBlob, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, path.string() + ": " + ex.what());
  }
}

}  // namespace dgs::blob
