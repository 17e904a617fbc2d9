#include "crel/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'C', 'R', 'E', 'L', 'A', 'R', 'C', '1'};
constexpr int kVersion = 1;
}  // namespace

const Matrix& Archive::get(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw DataError("archive: missing tensor '" + name + "'");
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return true;
  return false;
}

std::string serialize(const Archive& a) {
  std::string payload;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, m] : a.tensors) {
    table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    payload.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  nlohmann::json header{{"version", kVersion}, {"meta", a.meta}, {"tensors", table},
                        {"checksum", fnv1a(payload)}};
  const std::string h = header.dump();
  const std::uint64_t hlen = h.size();
  std::string out(kMagic, sizeof kMagic);
  out.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out += h;
  out += payload;
  return out;
}

Archive deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw DataError("archive: bad magic");
  std::uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + sizeof kMagic, sizeof hlen);
  const std::size_t off = sizeof kMagic + sizeof hlen;
  if (bytes.size() < off + hlen) throw DataError("archive: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(off, hlen));
  } catch (const nlohmann::json::exception&) {
    throw DataError("archive: corrupt header");
  }
  if (header.value("version", 0) != kVersion) throw DataError("archive: unsupported version");
  std::string_view payload = bytes.substr(off + hlen);
  if (fnv1a(payload) != header.at("checksum").get<std::uint64_t>()) throw DataError("archive: checksum mismatch");

  Archive a;
  a.meta = header.at("meta");
  std::size_t pos = 0;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (pos + n > payload.size()) throw DataError("archive: truncated payload");
    Matrix m(rows, cols);
    std::memcpy(m.data(), payload.data() + pos, n);
    pos += n;
    a.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (pos != payload.size()) throw DataError("archive: trailing bytes");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& a) {
  const std::string bytes = serialize(a);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace crel
