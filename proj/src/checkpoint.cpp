#include "tagx/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <fstream>

namespace tagx::checkpoint {

using nlohmann::json;

namespace {

void put_f32_le(std::string& out, double value) {
  const auto f = static_cast<float>(value);
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_f32_le(const std::string& in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)]);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string pack(const double* data, std::size_t count) {
  std::string bytes;
  bytes.reserve(count * 4);
  for (std::size_t i = 0; i < count; ++i) put_f32_le(bytes, data[i]);
  return base64_encode(bytes);
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                      reinterpret_cast<const unsigned char*>(bytes.data()),
                                      static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw DataError("base64 payload length is not a multiple of 4");
  std::string out(3 * text.size() / 4 + 1, '\0');
  const int written = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                      reinterpret_cast<const unsigned char*>(text.data()),
                                      static_cast<int>(text.size()));
  if (written < 0) throw DataError("invalid base64 payload");
  std::size_t size = static_cast<std::size_t>(written);
  // EVP_DecodeBlock counts padding bytes as output.
  if (!text.empty() && text.back() == '=') --size;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

json encode_matrix(const Matrix& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"dtype", "float32-le"},
          {"data", pack(m.data(), static_cast<std::size_t>(m.size()))}};
}

Matrix decode_matrix(const json& j) {
  try {
    if (j.at("dtype").get<std::string>() != "float32-le") throw DataError("unsupported dtype");
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const std::string bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4) {
      throw DataError("matrix payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(rows * cols * 4));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = get_f32_le(bytes, static_cast<std::size_t>(i) * 4);
    }
    if (!m.allFinite()) throw DataError("non-finite value in matrix payload");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed matrix entry: ") + e.what());
  }
}

json encode_vector(const Vector& v) {
  return {{"size", v.size()},
          {"dtype", "float32-le"},
          {"data", pack(v.data(), static_cast<std::size_t>(v.size()))}};
}

Vector decode_vector(const json& j) {
  try {
    const auto size = j.at("size").get<Eigen::Index>();
    const std::string bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(size) * 4) throw DataError("vector payload size mismatch");
    Vector v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = get_f32_le(bytes, static_cast<std::size_t>(i) * 4);
    if (!v.allFinite()) throw DataError("non-finite value in vector payload");
    return v;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed vector entry: ") + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace tagx::checkpoint
