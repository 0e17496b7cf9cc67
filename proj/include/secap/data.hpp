#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "secap/tensor.hpp"

namespace secap {

enum class View : std::uint8_t { Aerial, GroundFrontal, GroundOblique };
enum class CoarseView : std::uint8_t { Aerial, Ground };

std::string_view to_string(View v);
View parse_view(std::string_view s);

// Collapses fine-grained views for protocol construction.
struct ViewMap {
  CoarseView operator()(View v) const { return v == View::Aerial ? CoarseView::Aerial : CoarseView::Ground; }
};

// Class index fed to the view classifier: aerial 0, ground 1; with three
// views ground-oblique gets its own class 2.
std::int64_t view_label(View v, std::size_t num_views);

struct SampleRecord {
  std::string path;           // relative to the manifest directory
  std::int64_t identity = 0;  // -1 marks a distractor
  int camera = 0;
  View view = View::GroundFrontal;
  std::int64_t frame = 0;

  bool is_distractor() const { return identity < 0; }
  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::string name = "synthetic";
  std::size_t num_views = 2;
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 32;
  std::vector<SampleRecord> records;

  // Sorts by path and checks uniqueness and identity >= -1.
  void normalize();
};

// Text format: "#secap-manifest v1", "#key=value" metadata lines, then one
// tab-separated "path id camera view frame" record per line.
void write_manifest(std::ostream& out, const Manifest& manifest);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(std::istream& in);
Manifest read_manifest(const std::filesystem::path& path);

// Records under "train/" and "test/" respectively.
std::vector<SampleRecord> train_records(const Manifest& manifest);
std::vector<SampleRecord> test_records(const Manifest& manifest);

struct ImageName {
  std::int64_t identity = 0;
  int camera = 0;
  std::int64_t frame = 0;
  bool operator==(const ImageName&) const = default;
};

// "<id>_C<cam>_<frame>.<ext>", zero-padded decimal fields; a leading '-' on
// the id marks a distractor. Directory components are ignored.
ImageName parse_image_name(std::string_view name);
std::string format_image_name(const ImageName& name, std::string_view ext);

enum class Protocol { AerialToGround, GroundToAerial, GroundToAerialGround };

std::string_view to_string(Protocol p);
// Accepts the CLI spellings a2g, g2a, g2ag.
Protocol parse_protocol(std::string_view s);

struct ProtocolSplit {
  Protocol protocol = Protocol::AerialToGround;
  std::vector<SampleRecord> query;
  std::vector<SampleRecord> gallery;
};

// Queries are the designated records of the query view; the gallery holds
// every test record of the gallery view(s), distractors included, minus the
// query images themselves. Queries whose identity never occurs in the gallery
// are dropped.
ProtocolSplit build_protocol(const std::vector<SampleRecord>& test, Protocol protocol,
                             const std::vector<SampleRecord>& designated_queries,
                             const ViewMap& view_map = {});

// P distinct identities with K records each, drawn with replacement when an
// identity has fewer than K. Distractors are never sampled.
std::vector<SampleRecord> pk_sample(const std::vector<SampleRecord>& records, std::size_t p,
                                    std::size_t k, std::uint64_t seed);

struct AugmentPolicy {
  bool enabled = true;
  std::size_t pad = 4;
  double jitter_lo = 0.8;
  double jitter_hi = 1.2;
  double erase_prob = 0.5;
  double erase_area_lo = 0.02;
  double erase_area_hi = 0.4;
  double erase_aspect_lo = 0.3;
  double erase_aspect_hi = 3.33;
};

struct AugmentTrace {
  std::size_t crop_y = 0, crop_x = 0;
  std::vector<double> jitter;
  bool erased = false;
  std::size_t erase_y = 0, erase_x = 0, erase_h = 0, erase_w = 0;
};

// Pad-and-crop, per-channel multiplicative jitter, random erasing with
// uniform-noise fill. Output has the input's shape.
Tensor<float> augment(const Tensor<float>& image, const AugmentPolicy& policy, std::uint64_t seed,
                      AugmentTrace* trace = nullptr);

// Histogram of oriented gradients on the channel-mean image: 8x8 cells,
// 9 unsigned orientation bins, 2x2-cell blocks L2-normalized.
std::vector<double> hog_descriptor(const Tensor<float>& image);

// Indices of `count` representatives among descriptors (given in path order):
// symmetric k-NN graph with k = min(3, n-1), connected components by size,
// medoid of each component. Ties resolve to the lower index.
std::vector<std::size_t> select_representatives(const std::vector<std::vector<double>>& descriptors,
                                                std::size_t count);

using ImageLoader = std::function<Tensor<float>(const SampleRecord&)>;

// Representative query images per (identity, view).
std::vector<SampleRecord> select_queries(const std::vector<SampleRecord>& records,
                                         std::size_t per_view, const ImageLoader& load,
                                         std::ostream* warnings = nullptr);

// Image files: .rten tensors [C, H, W] or binary P6 PPM (scaled to [0, 1]).
Tensor<float> read_ppm(const std::filesystem::path& path);
Tensor<float> load_image(const std::filesystem::path& path);

// Loads each image once, relative to a root directory.
class ImageCache {
 public:
  explicit ImageCache(std::filesystem::path root) : root_(std::move(root)) {}
  const Tensor<float>& get(const SampleRecord& record);
  ImageLoader loader() {
    return [this](const SampleRecord& r) { return get(r); };
  }

 private:
  std::filesystem::path root_;
  std::unordered_map<std::string, Tensor<float>> images_;
};

struct SynthConfig {
  std::size_t num_ids = 8;
  std::size_t images_per_id_per_view = 4;
  std::size_t num_views = 2;
  std::size_t height = 64;
  std::size_t width = 32;
  std::uint64_t seed = 1;
  double view_strength = 1.0;
  double test_fraction = 0.5;  // trailing identities held out for evaluation
  std::size_t distractors = 0;

  void validate() const;
};

struct SynthSample {
  SampleRecord record;
  std::vector<double> latent;  // appearance code the image was rendered from
  Tensor<float> image;
};

// Identity appearance codes are at least kSynthIdentityMargin apart and the
// per-image jitter has norm at most kSynthIdentityMargin / 5.
inline constexpr double kSynthIdentityMargin = 0.3;

std::vector<SynthSample> synthesize(const SynthConfig& cfg);
// Writes images and manifest.tsv under out_dir.
Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace secap
