#pragma once

#include "tagx/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace tagx::checkpoint {

/// {"rows", "cols", "dtype": "float32-le", "data": base64} with row-major data.
nlohmann::json encode_matrix(const Matrix& m);
Matrix decode_matrix(const nlohmann::json& j);

nlohmann::json encode_vector(const Vector& v);
Vector decode_vector(const nlohmann::json& j);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace tagx::checkpoint
