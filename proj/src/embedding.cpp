#include "persona/embedding.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace persona {
namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return value;
}

}  // namespace

std::string encode_vector_file(const EmbeddingRows& rows) {
  std::string out;
  const auto count = static_cast<std::uint64_t>(rows.rows());
  const auto dim = static_cast<std::uint32_t>(rows.cols());
  out.reserve(kVectorHeaderBytes + count * dim * 4);
  out.append(kVectorMagic, 4);
  put_le<std::uint32_t>(out, kVectorFileVersion);
  put_le<std::uint32_t>(out, dim);
  put_le<std::uint64_t>(out, count);
  const float* data = rows.data();
  for (std::uint64_t i = 0; i < count * dim; ++i) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(data[i]));
  }
  return out;
}

EmbeddingRows decode_vector_file(const std::string& bytes) {
  if (bytes.size() < kVectorHeaderBytes) {
    throw Error(ErrorCode::kCorruptManifest, "vector file shorter than header");
  }
  if (std::memcmp(bytes.data(), kVectorMagic, 4) != 0) {
    throw Error(ErrorCode::kCorruptManifest, "vector file has bad magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kVectorFileVersion) {
    throw Error(ErrorCode::kCorruptManifest,
                "unsupported vector file version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint32_t>(bytes, 8);
  const auto count = get_le<std::uint64_t>(bytes, 12);
  const std::size_t payload = bytes.size() - kVectorHeaderBytes;
  // Guard the multiplication before trusting count.
  if (dim == 0 || count > payload / 4 / dim || payload != count * dim * 4) {
    throw Error(ErrorCode::kCorruptManifest,
                "vector file size does not match header (dim " +
                    std::to_string(dim) + ", count " + std::to_string(count) + ")");
  }
  EmbeddingRows rows(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  float* data = rows.data();
  for (std::uint64_t i = 0; i < count * dim; ++i) {
    data[i] = std::bit_cast<float>(
        get_le<std::uint32_t>(bytes, kVectorHeaderBytes + 4 * i));
  }
  return rows;
}

void write_vector_file(const std::filesystem::path& path,
                       const EmbeddingRows& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  }
  const std::string bytes = encode_vector_file(rows);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::kIoError, "short write to " + path.string());
  }
}

EmbeddingRows read_vector_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_vector_file(buf.str());
}

}  // namespace persona
