#include "synthdata.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "error.hpp"

namespace dynfed {

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void clamp_unit(Tensor& t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

// Separable convolution along rows then columns with reflective borders.
Tensor separable_blur(const Tensor& image, const std::vector<double>& kernel) {
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const int r = static_cast<int>(kernel.size()) / 2;
  Tensor tmp(image.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) acc += kernel[j + r] * image[y * w + reflect_index(x + j, w)];
      tmp[y * w + x] = acc;
    }
  }
  Tensor out(image.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) acc += kernel[j + r] * tmp[reflect_index(y + j, h) * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

Tensor filter2d(const Tensor& image, const std::vector<double>& kernel, int k) {
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const int r = k / 2;
  Tensor out(image.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky) {
        const int yy = reflect_index(y + ky, h);
        for (int kx = -r; kx <= r; ++kx) acc += kernel[(ky + r) * k + kx + r] * image[yy * w + reflect_index(x + kx, w)];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

void check_patch_tensor(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 1) {
    throw ContractError(std::string(what) + " must have shape [1,H,W], got " + shape_string(t.shape()));
  }
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::ifstream& in, const std::filesystem::path& path) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), bytes.size())) throw IoError(path.string() + ": truncated patch file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void TextureSpec::validate() const {
  if (height <= 0 || width <= 0) throw ContractError("texture spec: patch size must be positive");
  if (min_blobs < 0 || max_blobs < min_blobs) throw ContractError("texture spec: invalid blob count range");
  if (min_radius <= 0.0 || max_radius < min_radius) throw ContractError("texture spec: invalid blob radius range");
  if (max_blobs > 0 && 2.0 * max_radius > std::min(height, width)) {
    throw ContractError("texture spec: blob diameter " + std::to_string(2.0 * max_radius) + " exceeds patch size");
  }
  if (noise_std < 0.0 || patient_jitter < 0.0 || texture_amplitude < 0.0) {
    throw ContractError("texture spec: noise parameters must be non-negative");
  }
}

TextureSpec TextureSpec::bcss_analog() { return {}; }

TextureSpec TextureSpec::semicol_analog() {
  TextureSpec s;
  s.background = 0.55;
  s.foreground = 0.80;
  s.min_blobs = 2;
  s.max_blobs = 4;
  s.min_radius = 2.5;
  s.max_radius = 6.0;
  return s;
}

TextureSpec TextureSpec::reference_analog() {
  TextureSpec s;
  s.background = 0.38;
  s.foreground = 0.68;
  s.min_blobs = 1;
  s.max_blobs = 4;
  s.min_radius = 2.0;
  s.max_radius = 8.0;
  s.noise_std = 0.05;
  s.texture_amplitude = 0.07;
  return s;
}

Patch generate_patch(Rng& rng, const TextureSpec& spec, int patient_id, double patient_offset) {
  spec.validate();
  const auto h = static_cast<std::size_t>(spec.height);
  const auto w = static_cast<std::size_t>(spec.width);
  Patch patch{Tensor({1, h, w}), Tensor({1, h, w}), patient_id};

  std::uniform_int_distribution<int> blob_count(spec.min_blobs, spec.max_blobs);
  std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
  std::uniform_real_distribution<double> cy(0.0, static_cast<double>(h));
  std::uniform_real_distribution<double> cx(0.0, static_cast<double>(w));
  const int blobs = blob_count(rng);
  for (int b = 0; b < blobs; ++b) {
    const double r = radius(rng);
    const double y0 = cy(rng);
    const double x0 = cx(rng);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - y0;
        const double dx = static_cast<double>(x) + 0.5 - x0;
        if (dy * dy + dx * dx <= r * r) patch.mask[y * w + x] = 1.0;
      }
    }
  }

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> freq(0.1, 0.4);
  const double fy = freq(rng), fx = freq(rng), ph = phase(rng);
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double base = patch.mask[i] > 0.5 ? spec.foreground : spec.background;
      const double texture = spec.texture_amplitude * std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(x) + ph);
      const double n = spec.noise_std > 0.0 ? noise(rng) : 0.0;
      patch.image[i] = std::clamp(base + patient_offset + texture + n, 0.0, 1.0);
    }
  }
  return patch;
}

std::vector<Patch> generate_patient(std::uint64_t seed, const TextureSpec& spec, int patient_id, int count) {
  Rng rng(derive_seed(seed, {0x9a7, static_cast<std::uint64_t>(patient_id)}));
  std::uniform_real_distribution<double> jitter(-spec.patient_jitter, spec.patient_jitter);
  const double offset = spec.patient_jitter > 0.0 ? jitter(rng) : 0.0;
  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_patch(rng, spec, patient_id, offset));
  return out;
}

std::vector<Patch> generate_cohort(std::uint64_t seed, const TextureSpec& spec, int patients, int patches_per_patient) {
  if (patients <= 0 || patches_per_patient <= 0) throw ContractError("cohort needs at least one patient and patch");
  std::vector<Patch> all;
  for (int p = 0; p < patients; ++p) {
    auto group = generate_patient(seed, spec, p, patches_per_patient);
    std::move(group.begin(), group.end(), std::back_inserter(all));
  }
  return all;
}

Augmentation Augmentation::identity() { return {}; }

Augmentation Augmentation::gaussian_blur(int kernel, double sigma) {
  Augmentation a;
  a.kind = AugKind::GaussianBlur;
  a.kernel = kernel;
  a.sigma = sigma;
  return a;
}

Augmentation Augmentation::motion_blur(int limit, std::uint64_t seed) {
  Augmentation a;
  a.kind = AugKind::MotionBlur;
  a.kernel = limit;
  a.seed = seed;
  return a;
}

Augmentation Augmentation::brightness(double factor) {
  Augmentation a;
  a.kind = AugKind::Brightness;
  a.factor = factor;
  return a;
}

Augmentation Augmentation::gaussian_noise(double variance, std::uint64_t seed) {
  Augmentation a;
  a.kind = AugKind::GaussianNoise;
  a.variance = variance;
  a.seed = seed;
  return a;
}

void Augmentation::validate() const {
  switch (kind) {
    case AugKind::Identity:
      break;
    case AugKind::GaussianBlur:
      if (kernel < 1 || kernel % 2 == 0) throw ContractError("gaussian blur kernel must be odd and >= 1");
      if (!(sigma > 0.0)) throw ContractError("gaussian blur sigma must be positive");
      break;
    case AugKind::MotionBlur:
      if (kernel < 1 || kernel % 2 == 0) throw ContractError("motion blur limit must be odd and >= 1");
      break;
    case AugKind::Brightness:
      if (!(factor > 0.0)) throw ContractError("brightness factor must be positive");
      break;
    case AugKind::GaussianNoise:
      if (!(variance >= 0.0)) throw ContractError("noise variance must be non-negative");
      break;
  }
}

std::string Augmentation::name() const {
  switch (kind) {
    case AugKind::Identity: return "identity";
    case AugKind::GaussianBlur: return "gaussian_blur";
    case AugKind::MotionBlur: return "motion_blur";
    case AugKind::Brightness: return "brightness";
    case AugKind::GaussianNoise: return "gaussian_noise";
  }
  return "unknown";
}

std::vector<double> gaussian_kernel_1d(int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0) throw ContractError("gaussian kernel size must be odd and >= 1");
  if (!(sigma > 0.0)) throw ContractError("gaussian sigma must be positive");
  std::vector<double> k(static_cast<std::size_t>(kernel));
  const int c = kernel / 2;
  double sum = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = static_cast<double>(i - c);
    k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<double> motion_kernel(int kernel, double angle_radians) {
  if (kernel < 1 || kernel % 2 == 0) throw ContractError("motion kernel size must be odd and >= 1");
  std::vector<double> k(static_cast<std::size_t>(kernel) * kernel, 0.0);
  const int c = kernel / 2;
  const double dy = std::sin(angle_radians);
  const double dx = std::cos(angle_radians);
  // Rasterize the segment through the center with 4x supersampling.
  const int steps = 4 * kernel;
  for (int s = 0; s <= steps; ++s) {
    const double t = -c + 2.0 * c * static_cast<double>(s) / steps;
    const int y = std::clamp(static_cast<int>(std::lround(c + t * dy)), 0, kernel - 1);
    const int x = std::clamp(static_cast<int>(std::lround(c + t * dx)), 0, kernel - 1);
    k[static_cast<std::size_t>(y) * kernel + x] = 1.0;
  }
  double sum = 0.0;
  for (double v : k) sum += v;
  for (auto& v : k) v /= sum;
  return k;
}

Tensor augment_image(const Tensor& image, const Augmentation& aug) {
  check_patch_tensor(image, "augmented image");
  aug.validate();
  switch (aug.kind) {
    case AugKind::Identity:
      return image;
    case AugKind::GaussianBlur: {
      Tensor out = separable_blur(image, gaussian_kernel_1d(aug.kernel, aug.sigma));
      clamp_unit(out);
      return out;
    }
    case AugKind::MotionBlur: {
      if (aug.kernel < 3) return image;
      Rng rng(derive_seed(aug.seed, {0x3017}));
      std::uniform_int_distribution<int> half(1, aug.kernel / 2);
      std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
      const int k = 2 * half(rng) + 1;
      Tensor out = filter2d(image, motion_kernel(k, angle(rng)), k);
      clamp_unit(out);
      return out;
    }
    case AugKind::Brightness: {
      Tensor out = image;
      for (auto& v : out.values()) v *= aug.factor;
      clamp_unit(out);
      return out;
    }
    case AugKind::GaussianNoise: {
      if (aug.variance == 0.0) return image;
      Rng rng(derive_seed(aug.seed, {0x4015e}));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double variance = aug.variance * (1.0 - unit(rng));  // in (0, variance]
      std::normal_distribution<double> noise(0.0, std::sqrt(variance));
      Tensor out = image;
      for (auto& v : out.values()) v += noise(rng);
      clamp_unit(out);
      return out;
    }
  }
  return image;
}

Patch apply_augmentation(const Patch& patch, const Augmentation& aug) {
  check_patch_tensor(patch.mask, "patch mask");
  return {augment_image(patch.image, aug), patch.mask, patch.patient_id};
}

DatasetSplits split_by_patient(const std::vector<Patch>& patches, std::span<const double> fractions, Rng& rng) {
  if (fractions.empty() || fractions.size() > 3) throw ContractError("split_by_patient: need 1 to 3 fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ContractError("split_by_patient: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split_by_patient: fractions must sum to 1");

  std::set<int> id_set;
  for (const auto& p : patches) id_set.insert(p.patient_id);
  std::vector<int> ids(id_set.begin(), id_set.end());
  if (ids.size() < fractions.size()) {
    throw ContractError("split_by_patient: " + std::to_string(ids.size()) + " patients cannot fill " +
                        std::to_string(fractions.size()) + " splits");
  }
  std::shuffle(ids.begin(), ids.end(), rng);

  // Largest-remainder allocation of whole patients.
  const auto n = static_cast<double>(ids.size());
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * n;
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < ids.size(); ++r, ++assigned) counts[remainders[r % remainders.size()].second]++;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      auto largest = std::max_element(counts.begin(), counts.end());
      --*largest;
      counts[i] = 1;
    }
  }

  std::map<int, std::size_t> split_of;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (std::size_t c = 0; c < counts[s]; ++c) split_of[ids[pos++]] = s;
  }
  DatasetSplits out;
  for (const auto& p : patches) {
    switch (split_of.at(p.patient_id)) {
      case 0: out.train.push_back(p); break;
      case 1: out.test.push_back(p); break;
      default: out.val.push_back(p); break;
    }
  }
  return out;
}

ReferenceSet build_reference_set(int n, Rng& rng, std::span<const Augmentation> aug_kinds, const TextureSpec& spec) {
  if (n <= 0) throw ContractError("reference set size must be positive");
  if (aug_kinds.empty()) throw ContractError("reference set needs at least one augmentation kind");
  if (static_cast<std::size_t>(n) < aug_kinds.size()) {
    throw ContractError("reference set size " + std::to_string(n) + " is smaller than the number of augmentation kinds");
  }
  for (const auto& a : aug_kinds) a.validate();
  ReferenceSet refset;
  std::uniform_real_distribution<double> jitter(-spec.patient_jitter, spec.patient_jitter);
  for (int i = 0; i < n; ++i) {
    const double offset = spec.patient_jitter > 0.0 ? jitter(rng) : 0.0;
    refset.patches.push_back(generate_patch(rng, spec, i, offset));
    refset.assigned_augs.push_back(aug_kinds[static_cast<std::size_t>(i) % aug_kinds.size()].with_seed(rng()));
  }
  return refset;
}

Tensor augmented_inputs(const ReferenceSet& refset) {
  if (refset.patches.empty()) throw ContractError("reference set is empty");
  if (refset.assigned_augs.size() != refset.patches.size()) {
    throw ContractError("reference set augmentation list does not match patch count");
  }
  std::vector<Patch> augmented;
  augmented.reserve(refset.size());
  for (std::size_t i = 0; i < refset.size(); ++i) {
    augmented.push_back(apply_augmentation(refset.patches[i], refset.assigned_augs[i]));
  }
  return stack_images(augmented);
}

namespace {
Tensor stack(std::span<const Patch> patches, bool masks) {
  if (patches.empty()) throw ContractError("cannot stack an empty patch list");
  const auto& first = masks ? patches.front().mask : patches.front().image;
  check_patch_tensor(first, "patch");
  const std::size_t h = first.dim(1), w = first.dim(2), plane = h * w;
  Tensor out({patches.size(), 1, h, w});
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& t = masks ? patches[i].mask : patches[i].image;
    if (t.shape() != first.shape()) throw ContractError("patches have inconsistent shapes");
    std::copy(t.data(), t.data() + plane, out.data() + i * plane);
  }
  return out;
}
}  // namespace

Tensor stack_images(std::span<const Patch> patches) { return stack(patches, false); }
Tensor stack_masks(std::span<const Patch> patches) { return stack(patches, true); }

void write_patches(const std::filesystem::path& path, std::span<const Patch> patches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  std::uint32_t h = 0, w = 0;
  if (!patches.empty()) {
    h = static_cast<std::uint32_t>(patches.front().image.dim(1));
    w = static_cast<std::uint32_t>(patches.front().image.dim(2));
  }
  out.write("DYNP", 4);
  write_le<std::uint32_t>(out, h);
  write_le<std::uint32_t>(out, w);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(patches.size()));
  for (const auto& p : patches) {
    if (p.image.size() != static_cast<std::size_t>(h) * w || p.mask.size() != p.image.size()) {
      throw ContractError("write_patches: patches have inconsistent shapes");
    }
    write_le<std::int32_t>(out, p.patient_id);
    for (double v : p.image.values()) write_le<double>(out, v);
    for (double v : p.mask.values()) write_le<std::uint8_t>(out, v > 0.5 ? 1 : 0);
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<Patch> read_patches(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DYNP", 4) != 0) throw IoError(path.string() + ": bad magic");
  const auto h = read_le<std::uint32_t>(in, path);
  const auto w = read_le<std::uint32_t>(in, path);
  const auto count = read_le<std::uint32_t>(in, path);
  std::vector<Patch> patches;
  for (std::uint32_t c = 0; c < count; ++c) {
    Patch p{Tensor({1, h, w}), Tensor({1, h, w}), 0};
    p.patient_id = read_le<std::int32_t>(in, path);
    for (auto& v : p.image.values()) v = read_le<double>(in, path);
    for (auto& v : p.mask.values()) v = read_le<std::uint8_t>(in, path) ? 1.0 : 0.0;
    patches.push_back(std::move(p));
  }
  return patches;
}

}  // namespace dynfed
