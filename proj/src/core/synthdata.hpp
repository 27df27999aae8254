#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor_nn.hpp"

namespace dynfed {

/// Generator parameters for one synthetic tissue-like image family.
struct TextureSpec {
  int height = 32;
  int width = 32;
  int min_blobs = 1;
  int max_blobs = 3;
  double min_radius = 3.0;
  double max_radius = 7.0;
  double background = 0.30;
  double foreground = 0.60;
  double noise_std = 0.06;
  // Low-frequency stain-like modulation amplitude.
  double texture_amplitude = 0.05;
  // Per-patient intensity offset drawn from U(-jitter, jitter).
  double patient_jitter = 0.04;

  void validate() const;

  static TextureSpec bcss_analog();
  static TextureSpec semicol_analog();
  /// Public reference-set family, distinct from both training families.
  static TextureSpec reference_analog();
};

/// Single-channel image in [0,1] with its binary ground-truth mask.
struct Patch {
  Tensor image;  // [1,H,W]
  Tensor mask;   // [1,H,W], values in {0,1}
  int patient_id = 0;
};

/// One patch drawn from `rng`; `patient_offset` shifts both intensities.
Patch generate_patch(Rng& rng, const TextureSpec& spec, int patient_id = 0, double patient_offset = 0.0);

/// `count` patches for one synthetic patient sharing a texture seed.
std::vector<Patch> generate_patient(std::uint64_t seed, const TextureSpec& spec, int patient_id, int count);

std::vector<Patch> generate_cohort(std::uint64_t seed, const TextureSpec& spec, int patients, int patches_per_patient);

enum class AugKind { Identity, GaussianBlur, MotionBlur, Brightness, GaussianNoise };

struct Augmentation {
  AugKind kind = AugKind::Identity;
  int kernel = 1;         // GaussianBlur kernel; MotionBlur kernel-size limit
  double sigma = 0.0;     // GaussianBlur
  double factor = 1.0;    // Brightness
  double variance = 0.0;  // GaussianNoise upper limit (per-application variance ~ U(0, variance])
  std::uint64_t seed = 0; // MotionBlur angle/size and GaussianNoise draws

  static Augmentation identity();
  static Augmentation gaussian_blur(int kernel, double sigma);
  static Augmentation motion_blur(int limit, std::uint64_t seed = 0);
  static Augmentation brightness(double factor);
  static Augmentation gaussian_noise(double variance, std::uint64_t seed = 0);

  Augmentation with_seed(std::uint64_t s) const {
    Augmentation a = *this;
    a.seed = s;
    return a;
  }

  void validate() const;
  std::string name() const;

  friend bool operator==(const Augmentation&, const Augmentation&) = default;
};

/// Normalized 1-D Gaussian weights exp(-(i-c)^2 / 2 sigma^2).
std::vector<double> gaussian_kernel_1d(int kernel, double sigma);

/// Normalized k x k line kernel, row-major.
std::vector<double> motion_kernel(int kernel, double angle_radians);

/// Returns a copy with the augmentation applied to the image only; mask untouched.
Patch apply_augmentation(const Patch& patch, const Augmentation& aug);

/// Image transform on a [1,H,W] tensor (reflective borders, clamped to [0,1]).
Tensor augment_image(const Tensor& image, const Augmentation& aug);

struct DatasetSplits {
  std::vector<Patch> train;
  std::vector<Patch> test;
  std::vector<Patch> val;
};

/// Patient-disjoint split; `fractions` are (train[, test[, val]]) and must sum to 1.
DatasetSplits split_by_patient(const std::vector<Patch>& patches, std::span<const double> fractions, Rng& rng);

struct ReferenceSet {
  std::vector<Patch> patches;
  std::vector<Augmentation> assigned_augs;

  std::size_t size() const { return patches.size(); }
};

/// Reference patches from `spec`, augmentation kinds assigned round-robin over sample order.
ReferenceSet build_reference_set(int n, Rng& rng, std::span<const Augmentation> aug_kinds,
                                 const TextureSpec& spec = TextureSpec::reference_analog());

/// Augmented reference images as one [N,1,H,W] batch.
Tensor augmented_inputs(const ReferenceSet& refset);

/// Stacks patch images (or masks) into [N,1,H,W].
Tensor stack_images(std::span<const Patch> patches);
Tensor stack_masks(std::span<const Patch> patches);

// Flat binary patch files: "DYNP" magic, u32 H, u32 W, u32 count, then per
// patch an i32 patient id, H*W float64 image values and H*W mask bytes,
// little-endian.
void write_patches(const std::filesystem::path& path, std::span<const Patch> patches);
std::vector<Patch> read_patches(const std::filesystem::path& path);

}  // namespace dynfed
