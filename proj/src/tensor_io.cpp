#include "scp/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace scp {
inline namespace SCP_PRECISION_NS {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'C', 'P', 'T', 'E', 'N', 'S', 'R'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated tensor file: " + path.string());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (!t.defined()) throw ContractError("save_tensor: undefined tensor");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (real v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open tensor file: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("not an SCPTENSR file: " + path.string());
  }
  const std::uint32_t rank = get_u32(is, path);
  if (rank == 0 || rank > 16) throw IoError("implausible rank " + std::to_string(rank) + " in " + path.string());
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(is, path);
  const std::size_t n = shape_numel(shape);
  std::vector<real> values(n);
  for (auto& v : values) v = static_cast<real>(std::bit_cast<float>(get_u32(is, path)));
  return Tensor(std::move(shape), std::move(values));
}

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::set<std::string> seen;
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& [name, tensor] : tensors) {
    if (!seen.insert(name).second) throw ContractError("duplicate tensor name in checkpoint: " + name);
    std::string file = name;
    for (char& c : file) {
      if (c == '/' || c == '\\' || c == '\t') c = '_';
    }
    file += ".tns";
    save_tensor(dir / file, tensor);
    manifest << name << '\t' << file << '\n';
  }
  if (!manifest) throw IoError("write failed: " + (dir / "manifest.txt").string());
}

NamedTensors load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("missing checkpoint manifest: " + (dir / "manifest.txt").string());
  NamedTensors out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError("malformed manifest line in " + dir.string() + ": " + line);
    out.emplace_back(line.substr(0, tab), load_tensor(dir / line.substr(tab + 1)));
  }
  return out;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
