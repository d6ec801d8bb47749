#include "hamm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hamm/errors.hpp"

namespace hamm {

int MultimodalSample::image_size() const {
  for (const Tensor& t : images)
    if (!t.empty()) return t.dim(2);
  return 0;
}

int MultimodalSample::present_count() const {
  return static_cast<int>(std::count(present.begin(), present.end(), true));
}

Tensor normalize_rgb8(std::span<const std::uint8_t> rgb, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (rgb.size() != 3 * plane) throw DataError("normalize_rgb8: pixel count does not match size");
  Tensor out({3, size, size});
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[c * plane + i] = (rgb[3 * i + c] / 255.0 - kChannelMean[c]) / kChannelStd[c];
  return out;
}

std::vector<std::uint8_t> denormalize_rgb8(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("denormalize_rgb8 expects [3,S,S]");
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = (image[c * plane + i] * kChannelStd[c] + kChannelMean[c]) * 255.0;
      rgb[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return rgb;
}

ModalityInputs stack_batch(std::span<const MultimodalSample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("stack_batch: empty batch");
  const int S = samples[0]->image_size();
  const int N = static_cast<int>(samples.size());
  ModalityInputs out;
  const std::size_t per = 3ul * S * S;
  for (int m = 0; m < kNumModalities; ++m) {
    out[m] = Tensor({N, 3, S, S});
    for (int n = 0; n < N; ++n) {
      const Tensor& img = samples[n]->images[m];
      if (img.empty()) continue;
      if (img.size() != per) throw DataError("stack_batch: sample " + samples[n]->id + " has a mismatched image size");
      std::copy(img.data(), img.data() + per, out[m].data() + n * per);
    }
  }
  return out;
}

SplitManifest stratified_split(std::span<const MultimodalSample> samples, std::array<double, 3> ratios,
                               std::uint64_t seed) {
  if (samples.empty()) throw DataError("stratified_split: no samples");
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0) throw ConfigError("stratified_split: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("stratified_split: ratios must sum to 1");

  std::array<std::vector<std::string>, 4> by_class;
  for (const auto& s : samples) {
    if (s.label < 0 || s.label > 3) throw DataError("stratified_split: sample " + s.id + " has invalid label");
    by_class[s.label].push_back(s.id);
  }
  SplitManifest out;
  out.ratios = ratios;
  std::array<std::vector<std::string>*, 3> parts{&out.train, &out.val, &out.test};
  for (int c = 0; c < 4; ++c) {
    auto& ids = by_class[c];
    if (ids.empty()) continue;
    if (ids.size() < 5)
      throw DataError("stratified_split: class " + std::to_string(c) + " has only " + std::to_string(ids.size()) +
                      " samples (need at least 5)");
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0x5b117, c));
    rng.shuffle(ids);

    const int n = static_cast<int>(ids.size());
    std::array<int, 3> count{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = n * ratios[k];
      count[k] = static_cast<int>(std::floor(quota + 1e-9));
      frac[k] = quota - count[k];
      assigned += count[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];

    int pos = 0;
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < count[k]; ++i) parts[k]->push_back(ids[pos++]);
      out.counts[k][c] = count[k];
    }
  }
  return out;
}

std::vector<MultimodalSample> select(std::span<const MultimodalSample> pool, std::span<const std::string> ids) {
  std::map<std::string, const MultimodalSample*> index;
  for (const auto& s : pool) index[s.id] = &s;
  std::vector<MultimodalSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("select: unknown sample id " + id);
    out.push_back(*it->second);
  }
  return out;
}

void MissingnessConfig::validate() const {
  if (p_full < 0 || p_drop_one < 0 || p_drop_two < 0) throw ConfigError("missingness: negative probability");
  if (std::abs(p_full + p_drop_one + p_drop_two - 1.0) > 1e-9)
    throw ConfigError("missingness: probabilities must sum to 1");
}

MultimodalSample drop_modalities(const MultimodalSample& sample, std::span<const int> dropped) {
  MultimodalSample out = sample;
  for (int m : dropped) {
    out.images[m].fill(0.0);
    out.present[m] = false;
  }
  if (out.present_count() == 0) throw std::invalid_argument("drop_modalities: cannot remove every modality");
  return out;
}

MultimodalSample sample_missingness(const MultimodalSample& sample, const MissingnessConfig& config, Rng& rng) {
  config.validate();
  if (sample.present_count() != kNumModalities)
    throw std::invalid_argument("sample_missingness: sample " + sample.id + " is not fully present");
  const double u = rng.uniform();
  if (u < config.p_full) return sample;
  const int pick = static_cast<int>(rng.index(kNumModalities));
  if (u < config.p_full + config.p_drop_one) {
    const int dropped[] = {pick};
    return drop_modalities(sample, dropped);
  }
  std::vector<int> dropped;
  for (int m = 0; m < kNumModalities; ++m)
    if (m != pick) dropped.push_back(m);
  return drop_modalities(sample, dropped);
}

MissingEvalSet build_missing_eval_set(std::span<const MultimodalSample> split, const MissingEvalConfig& config,
                                      std::uint64_t seed) {
  if (config.modified_fraction < 0 || config.one_missing_share < 0 || config.one_missing_share > 1)
    throw ConfigError("missing eval: fractions out of range");
  MissingEvalSet out;
  out.samples.assign(split.begin(), split.end());
  for (const auto& s : split)
    if (s.present_count() != kNumModalities)
      throw DataError("missing eval: input split must be full-modality (" + s.id + ")");
  out.full = static_cast<int>(split.size());

  const int n = static_cast<int>(split.size());
  const double want = config.modified_fraction * n;
  const int modified = static_cast<int>(std::lround(want));
  const int n_one = static_cast<int>(std::lround(modified * config.one_missing_share));
  const int n_two = modified - n_one;
  std::string note;
  if (std::abs(want - modified) > 1e-9) note += "modified count rounded to " + std::to_string(modified) + "; ";
  if (n_one % kNumModalities || n_two % kNumModalities)
    note += "pattern counts not divisible by 3, earlier modalities receive the extra copies; ";

  // Copies draw from a shuffled order of the originals, cycling when more
  // copies than originals are requested.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x3155));
  rng.shuffle(order);
  for (int k = 0; k < modified && n > 0; ++k) {
    const MultimodalSample& src = split[order[k % n]];
    MultimodalSample copy;
    if (k < n_one) {
      const int m = k % kNumModalities;
      const int dropped[] = {m};
      copy = drop_modalities(src, dropped);
      copy.id = src.id + "~no_" + modality_name(m);
      ++out.dropped_one[m];
      ++out.one_missing;
    } else {
      const int keep = (k - n_one) % kNumModalities;
      std::vector<int> dropped;
      for (int m = 0; m < kNumModalities; ++m)
        if (m != keep) dropped.push_back(m);
      copy = drop_modalities(src, dropped);
      copy.id = src.id + "~only_" + modality_name(keep);
      ++out.kept_two[keep];
      ++out.two_missing;
    }
    out.samples.push_back(std::move(copy));
  }
  out.remainder_note = note;
  return out;
}

// --- disk format -----------------------------------------------------------

void write_ppm(const std::filesystem::path& path, std::span<const std::uint8_t> rgb, int size) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P6\n" << size << " " << size << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& size) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || w != h || w <= 0 || maxval != 255)
    throw DataError(path.string() + ": expected a square 8-bit binary PPM");
  f.get();
  std::vector<std::uint8_t> rgb(3ul * w * h);
  f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw DataError(path.string() + ": truncated pixel data");
  size = w;
  return rgb;
}

namespace {
constexpr const char* kSuffix[kNumModalities] = {"_f.ppm", "_o.ppm", "_v.ppm"};
}

void write_dataset(const std::filesystem::path& dir, std::span<const MultimodalSample> samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  manifest << "# id fundus oct vf label presence\n";
  for (const auto& s : samples) {
    manifest << s.id;
    for (int m = 0; m < kNumModalities; ++m) {
      if (!s.present[m]) {
        manifest << " -";
        continue;
      }
      const std::string name = s.id + kSuffix[m];
      write_ppm(dir / name, denormalize_rgb8(s.images[m]), s.images[m].dim(1));
      manifest << " " << name;
    }
    manifest << " " << s.label << " ";
    for (bool p : s.present) manifest << (p ? '1' : '0');
    manifest << "\n";
  }
  if (!manifest) throw DataError("manifest write failed in " + dir.string());
}

std::vector<MultimodalSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("no manifest.txt in " + dir.string());
  std::vector<MultimodalSample> out;
  std::string line;
  int line_no = 0, size = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    MultimodalSample s;
    std::array<std::string, kNumModalities> paths;
    std::string presence;
    if (!(in >> s.id >> paths[0] >> paths[1] >> paths[2] >> s.label >> presence) || presence.size() != 3 ||
        s.label < 0 || s.label > 3)
      throw DataError(dir.string() + "/manifest.txt:" + std::to_string(line_no) + ": malformed record");
    for (int m = 0; m < kNumModalities; ++m) {
      s.present[m] = presence[m] == '1';
      if (s.present[m] != (paths[m] != "-"))
        throw DataError(dir.string() + "/manifest.txt:" + std::to_string(line_no) + ": presence bits disagree with paths");
      if (!s.present[m]) continue;
      int sz = 0;
      const auto rgb = read_ppm(dir / paths[m], sz);
      if (size == 0) size = sz;
      if (sz != size) throw DataError(paths[m] + ": image size differs from the rest of the dataset");
      s.images[m] = normalize_rgb8(rgb, sz);
    }
    if (s.present_count() == 0) throw DataError("sample " + s.id + " has no modality");
    out.push_back(std::move(s));
  }
  for (auto& s : out)
    for (int m = 0; m < kNumModalities; ++m)
      if (!s.present[m]) s.images[m] = Tensor({3, size, size});
  return out;
}

}  // namespace hamm
