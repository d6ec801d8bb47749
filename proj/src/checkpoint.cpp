#include "hamm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "hamm/errors.hpp"

namespace hamm {
namespace {

constexpr char kMagic[8] = {'H', 'A', 'M', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kMaxString = 1u << 26;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v;
    read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > kMaxString) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) fail("truncated");
  }

  [[noreturn]] void fail(const std::string& why) { throw CheckpointError(path_ + ": " + why); }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, ck.kind);
    put_string(out, ck.config);
    put<std::uint64_t>(out, ck.metadata.size());
    for (const auto& [k, v] : ck.metadata) {
      put_string(out, k);
      put_string(out, v);
    }
    put<std::uint64_t>(out, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint archive");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = r.get_string();
  ck.config = r.get_string();
  const auto n_meta = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    ck.metadata[k] = r.get_string();
  }
  const auto n_tensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for " + name);
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = r.get<std::int32_t>();
      if (d < 0) r.fail("negative dimension for " + name);
      count *= static_cast<std::uint64_t>(d);
    }
    if (count > (1ull << 32)) r.fail("implausible size for " + name);
    Tensor t(shape);
    r.read(reinterpret_cast<char*>(t.data()), t.size() * sizeof(double));
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return ck;
}

void store_parameters(Checkpoint& ck, const ParamList& params) {
  for (const auto& np : params) ck.tensors[np.name] = np.param->value;
}

int load_parameters(const Checkpoint& ck, const ParamList& params, std::string_view prefix) {
  int loaded = 0;
  for (const auto& np : params) {
    if (np.name.compare(0, prefix.size(), prefix) != 0) continue;
    const auto it = ck.tensors.find(np.name);
    if (it == ck.tensors.end()) throw CheckpointError("checkpoint lacks parameter " + np.name);
    if (it->second.shape() != np.param->value.shape())
      throw CheckpointError("shape mismatch for " + np.name + ": checkpoint " + to_string(it->second.shape()) +
                            ", model " + to_string(np.param->value.shape()));
    np.param->value = it->second;
    ++loaded;
  }
  return loaded;
}

}  // namespace hamm
