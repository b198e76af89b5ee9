#include "malvis/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>

#include "malvis/error.hpp"

namespace malvis {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) raise(errc::malformed_snapshot, "unexpected end of snapshot");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_snapshot(Model& model, const std::filesystem::path& path) {
  std::string out;
  out += "MVSN";
  put_u32(out, 1);
  const std::string spec = spec_to_config(model.spec());
  put_u32(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;

  std::vector<ParamRef> params = model.params();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const ParamRef& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value->rank()));
    for (std::size_t d : p.value->shape()) put_u64(out, d);
    for (std::size_t i = 0; i < p.value->numel(); ++i) put_f64(out, (*p.value)[i]);
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) raise(errc::io_failure, "cannot open '" + path.string() + "' for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) raise(errc::io_failure, "failed writing '" + path.string() + "'");
}

Model load_snapshot(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) raise(errc::io_failure, "cannot open '" + path.string() + "' for reading");
  std::string data(std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>{});

  Reader r{data};
  if (r.bytes(4) != "MVSN") raise(errc::malformed_snapshot, "bad magic");
  const std::uint32_t version = r.u32();
  if (version != 1) raise(errc::malformed_snapshot, "unsupported version " + std::to_string(version));
  const std::uint32_t spec_len = r.u32();
  Model model = build_model(spec_from_config(r.bytes(spec_len)));

  std::unordered_map<std::string, ParamRef> by_name;
  for (ParamRef& p : model.params()) by_name.emplace(p.name, p);

  const std::uint32_t count = r.u32();
  if (count != by_name.size())
    raise(errc::malformed_snapshot, "parameter count does not match architecture");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    auto it = by_name.find(name);
    if (it == by_name.end()) raise(errc::malformed_snapshot, "unknown parameter '" + name + "'");
    Tensor& value = *it->second.value;
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> dims(rank);
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = static_cast<std::size_t>(r.u64());
    if (dims != value.shape())
      raise(errc::malformed_snapshot, "shape mismatch for parameter '" + name + "'");
    for (std::size_t j = 0; j < value.numel(); ++j) value[j] = r.f64();
    by_name.erase(it);
  }
  if (!by_name.empty()) raise(errc::malformed_snapshot, "missing parameters in snapshot");
  if (r.pos != data.size()) raise(errc::malformed_snapshot, "trailing bytes after parameters");
  return model;
}

}  // namespace malvis
