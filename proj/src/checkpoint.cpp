#include "fedunlearn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'E', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(const std::vector<char>& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw MissingArtifactError("truncated checkpoint file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<char> bytes(kMagic.begin(), kMagic.end());
  put_u64(bytes, ckpt.round_index);
  put_u64(bytes, static_cast<std::uint64_t>(ckpt.values.size()));
  for (Eigen::Index i = 0; i < ckpt.values.size(); ++i)
    put_u64(bytes, std::bit_cast<std::uint64_t>(ckpt.values(i)));
  put_u64(bytes, ckpt.config_hash);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw MissingArtifactError("not a checkpoint file: " + path.string());
  std::size_t pos = kMagic.size();
  Checkpoint ckpt;
  ckpt.round_index = get_u64(bytes, pos);
  const std::uint64_t d = get_u64(bytes, pos);
  if (d > (bytes.size() - pos) / 8) throw MissingArtifactError("truncated checkpoint file");
  ckpt.values.resize(static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < d; ++i)
    ckpt.values(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(get_u64(bytes, pos));
  ckpt.config_hash = get_u64(bytes, pos);
  return ckpt;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fedunlearn
