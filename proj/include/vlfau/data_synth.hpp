#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlfau/params.hpp"
#include "vlfau/tensor.hpp"
#include "vlfau/vocab.hpp"

namespace vlfau {

/// Binary ground truth, one entry per AU.
using AULabels = std::vector<int>;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One FACS action unit: where it shows up on the synthetic face and how it is described.
struct AuSpec {
  int code;                 ///< FACS number, e.g. 12
  std::string name;         ///< e.g. "Lip Corner Puller"
  double row, offset;       ///< site centre on a 64x64 face; mirrored about the midline by `offset`
  double angle;             ///< blob orientation (radians) on the right-hand copy
  double color[3];          ///< per-channel blob weights
  std::string active;       ///< local description when active
  std::string inactive;     ///< local description when inactive
  std::string phrase;       ///< fragment used in the global description
};

/// Every AU the generator knows about, in ascending FACS order.
const std::vector<AuSpec>& au_catalog();

/// The AU set for a given count: 8 -> the DISFA set, 12 -> the BP4D set,
/// otherwise the first `count` catalogue entries.
std::vector<AuSpec> au_set(int count);

std::string gender_of_subject(int subject_id);

struct SynthConfig {
  int au_count = 8;
  int subjects = 24;
  int samples_per_subject = 100;
  int image_size = 64;
  std::vector<double> rates;        ///< per-AU activation probability; empty -> defaults
  double coactivation = 0.0;        ///< P(partner active | lead active) for linked AU pairs
  double noise = 0.03;              ///< per-pixel Gaussian noise
  double blob_amplitude = 0.5;

  /// Fills in default rates and validates; throws ConfigError.
  SynthConfig resolved() const;
  int sample_count() const { return subjects * samples_per_subject; }
};

std::vector<double> default_rates(int au_count);

struct Captions {
  std::vector<std::string> locals;
  std::string global;
};

/// Template filling. Active AUs appear in the global text in catalogue order.
Captions compose_captions(const AULabels& au_states, const std::string& gender, const std::vector<AuSpec>& aus);

/// Recovers the AU states named by a global description.
AULabels labels_from_global(const std::string& global, const std::vector<AuSpec>& aus);

/// Every string any caption can contain; the generator builds its vocabulary from this.
std::vector<std::string> caption_corpus(const std::vector<AuSpec>& aus);

/// Noise-free subject appearance (3, S, S).
Tensor<float> subject_base_texture(int subject_id, int image_size);

/// Base texture plus one (bilateral) blob per active AU plus noise, clamped to [0, 1].
/// Draws the same number of random values whatever the AU states.
Tensor<float> render_sample(int subject_id, const AULabels& au_states, Rng& rng, const std::vector<AuSpec>& aus,
                            int image_size, double noise = 0.03, double blob_amplitude = 0.5);

/// Pixel window (row0, col0, size) covering the right-hand copy of AU `au`'s site.
struct Window {
  int row0, col0, size;
};
Window site_window(const AuSpec& au, int image_size);

struct DatasetManifest {
  int sample_count = 0;
  int au_count = 0;
  std::vector<int> au_codes;
  std::vector<int> subjects;
  std::vector<std::string> genders;  ///< aligned with subjects
  int channels = 3, height = 64, width = 64;
  std::string vocabulary = "vocab.txt";
  std::vector<double> rates;
  std::uint64_t seed = 0;
  double coactivation = 0.0;
  double noise = 0.03;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

/// Writes manifest.json, labels.csv, captions.jsonl, vocab.txt and images/NNNNNN.ten.
/// Output is a pure function of (config, seed).
DatasetManifest generate_dataset(const SynthConfig& config, std::uint64_t seed, const std::string& out_dir);

struct Sample {
  int id = 0;
  int subject = 0;
  std::string gender;
  AULabels labels;
  std::string global_caption;
  std::vector<std::string> local_captions;
  Tensor<float> image;
};

struct Dataset {
  std::string root;
  DatasetManifest manifest;
  Vocabulary vocab;
  std::vector<Sample> samples;
  std::vector<AuSpec> aus;

  std::vector<int> subject_of_samples() const;
};

Dataset load_dataset(const std::string& dir, bool load_images = true);

/// k subject-exclusive folds of sample indices (ascending within a fold).
/// Subjects are shuffled with `seed` and dealt round-robin.
std::vector<std::vector<int>> split_folds(const std::vector<int>& subject_of_sample, int k, std::uint64_t seed);

/// eps_i = max(count_i / M, 1 / (2M)) over the selected rows.
std::vector<double> occurrence_rates(const std::vector<AULabels>& labels);

/// Stateless 64-bit mixer used to derive per-sample seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace vlfau
