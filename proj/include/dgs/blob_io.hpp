#pragma once

// Raw little-endian blob files shared by the case container and checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dgs::blob {

enum class DType { F64, U32 };

struct Entry {
  std::string name;
  std::vector<std::size_t> shape;
  DType dtype = DType::F64;
  std::size_t byte_length = 0;
};

std::size_t element_count(const std::vector<std::size_t>& shape);
std::size_t element_size(DType dtype);

Entry write_f64(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::size_t>& shape, const double* data);
Entry write_u32(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::size_t>& shape, const std::uint32_t* data);

/// Reads `<dir>/<entry.name>.bin`, checking the file size against both the
/// manifest byte length and the declared shape.
std::vector<double> read_f64(const std::filesystem::path& dir, const Entry& entry);
std::vector<std::uint32_t> read_u32(const std::filesystem::path& dir, const Entry& entry);

nlohmann::json to_json(const Entry& e);
Entry entry_from_json(const nlohmann::json& j);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace dgs::blob
