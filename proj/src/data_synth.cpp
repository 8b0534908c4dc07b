#include "vlfau/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

namespace vlfau {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<AuSpec>& au_catalog() {
  static const std::vector<AuSpec> catalog = {
      {1, "Inner Brow Raiser", 15, 6, 1.2, {1.0, 0.6, 0.3},
       "the inner brows are raised by the medial frontalis and the central forehead wrinkles",
       "the inner brows rest level and the central forehead stays smooth", "raised inner brows"},
      {2, "Outer Brow Raiser", 13, 18, 0.5, {0.3, 0.6, 1.0},
       "the outer brows are lifted by the lateral frontalis and the brow arches upward",
       "the outer brows rest level and the lateral forehead stays smooth", "raised outer brows"},
      {4, "Brow Lowerer", 19, 9, -0.4, {0.2, 1.0, 0.4},
       "the brows are pulled down and together by the corrugator and vertical furrows appear",
       "the brows are not lowered and no furrows appear between them", "lowered brows"},
      {6, "Cheek Raiser", 36, 18, 0.9, {1.0, 0.3, 0.5},
       "the cheeks are lifted by the orbicularis oculi and crow's feet wrinkles appear",
       "the cheeks are relaxed and the skin around the eyes stays smooth", "raised cheeks"},
      {7, "Lid Tightener", 25, 13, 0.0, {0.5, 0.5, 1.0},
       "the eyelids are tightened by the inner orbicularis oculi and the eye aperture narrows",
       "the eyelids are relaxed and the eye aperture stays open", "tightened eyelids"},
      {9, "Nose Wrinkler", 31, 4, 1.4, {0.8, 1.0, 0.2},
       "the nose is wrinkled by the levator labii alaeque nasi and the nostrils widen",
       "the nose is smooth and the nostrils rest", "a wrinkled nose"},
      {10, "Upper Lip Raiser", 41, 6, 0.2, {0.4, 0.2, 1.0},
       "the upper lip is raised by the levator labii superioris and the nasolabial furrow deepens",
       "the upper lip rests and the nasolabial furrow stays shallow", "a raised upper lip"},
      {12, "Lip Corner Puller", 46, 13, -0.7, {1.0, 0.8, 0.1},
       "the lip corners are pulled up obliquely by the zygomaticus major and the nasolabial furrow deepens",
       "the lip corners rest and are not pulled up", "pulled up lip corners"},
      {14, "Dimpler", 47, 19, 1.3, {0.1, 0.7, 0.9},
       "the lip corners are tightened inward by the buccinator and dimples form in the cheeks",
       "the lip corners are not tightened and no dimples form", "dimpled cheeks"},
      {15, "Lip Corner Depressor", 52, 12, 0.7, {0.9, 0.2, 0.2},
       "the lip corners are pulled down by the depressor anguli oris and the chin skin stretches",
       "the lip corners are not pulled down", "depressed lip corners"},
      {17, "Chin Raiser", 58, 5, 0.0, {0.6, 0.9, 0.6},
       "the chin boss is pushed up by the mentalis and the lower lip protrudes",
       "the chin is relaxed and the lower lip rests", "a raised chin"},
      {23, "Lip Tightener", 48, 7, 0.0, {0.9, 0.5, 0.9},
       "the lips are tightened and narrowed by the orbicularis oris and the red parts thin",
       "the lips are relaxed and keep their full shape", "tightened lips"},
      {24, "Lip Pressor", 50, 3, 1.5, {0.3, 0.3, 0.8},
       "the lips are pressed together by the orbicularis oris and bulge slightly",
       "the lips are not pressed together", "pressed lips"},
      {25, "Lips Part", 49, 0, 0.0, {0.2, 0.9, 1.0},
       "the lips are parted and the teeth or inner mouth become visible",
       "the lips are closed and touch each other", "parted lips"},
      {26, "Jaw Drop", 57, 0, 1.57, {1.0, 0.4, 0.8},
       "the jaw is dropped by the relaxed masseter and the mouth opens downward",
       "the jaw is closed and the mouth does not open downward", "a dropped jaw"},
  };
  return catalog;
}

std::vector<AuSpec> au_set(int count) {
  const auto& cat = au_catalog();
  if (count < 1 || count > static_cast<int>(cat.size())) {
    throw ConfigError("AU count must be between 1 and " + std::to_string(cat.size()));
  }
  std::vector<int> codes;
  if (count == 8) {
    codes = {1, 2, 4, 6, 9, 12, 25, 26};
  } else if (count == 12) {
    codes = {1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24};
  } else {
    for (int i = 0; i < count; ++i) codes.push_back(cat[static_cast<std::size_t>(i)].code);
  }
  std::vector<AuSpec> out;
  for (int c : codes)
    for (const auto& a : cat)
      if (a.code == c) out.push_back(a);
  return out;
}

std::string gender_of_subject(int subject_id) { return subject_id % 2 == 0 ? "male" : "female"; }

std::vector<double> default_rates(int au_count) {
  static const double pattern[] = {0.2, 0.15, 0.3, 0.25, 0.1, 0.35, 0.45, 0.2};
  std::vector<double> r;
  for (int i = 0; i < au_count; ++i) r.push_back(pattern[i % 8]);
  return r;
}

SynthConfig SynthConfig::resolved() const {
  SynthConfig c = *this;
  au_set(c.au_count);  // validates the count
  if (c.subjects < 1) throw ConfigError("need at least one subject");
  if (c.samples_per_subject < 1) throw ConfigError("need at least one sample per subject");
  if (c.image_size < 16 || c.image_size % 16) throw ConfigError("image size must be a positive multiple of 16");
  if (c.rates.empty()) c.rates = default_rates(c.au_count);
  if (static_cast<int>(c.rates.size()) != c.au_count) throw ConfigError("need one activation rate per AU");
  for (double r : c.rates)
    if (!(r > 0 && r < 1)) throw ConfigError("activation rates must lie in (0, 1)");
  if (!(c.coactivation >= 0 && c.coactivation <= 1)) throw ConfigError("coactivation must lie in [0, 1]");
  if (!(c.noise >= 0)) throw ConfigError("noise must be non-negative");
  return c;
}

// ---------------------------------------------------------------------------
// Captions

Captions compose_captions(const AULabels& au_states, const std::string& gender, const std::vector<AuSpec>& aus) {
  if (au_states.size() != aus.size()) {
    throw ConfigError("caption templates exist for " + std::to_string(aus.size()) + " AUs, got " +
                      std::to_string(au_states.size()) + " states");
  }
  Captions c;
  std::vector<std::string> phrases;
  for (std::size_t i = 0; i < aus.size(); ++i) {
    const std::string& t = au_states[i] ? aus[i].active : aus[i].inactive;
    if (t.empty()) throw ConfigError("missing caption template for AU" + std::to_string(aus[i].code));
    c.locals.push_back(t);
    if (au_states[i]) phrases.push_back(aus[i].phrase);
  }
  c.global = "a " + gender + " face with ";
  if (phrases.empty()) {
    c.global += "a neutral expression";
  } else {
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i > 0) c.global += (i + 1 == phrases.size()) ? " and " : " , ";
      c.global += phrases[i];
    }
  }
  return c;
}

AULabels labels_from_global(const std::string& global, const std::vector<AuSpec>& aus) {
  // Phrase boundaries are the frame, ',' and 'and'; compare whole segments.
  const auto toks = tokenize(global);
  std::vector<std::string> segments;
  std::string cur;
  for (std::size_t i = 4; i < toks.size(); ++i) {
    if (toks[i] == "," || toks[i] == "and") {
      segments.push_back(cur);
      cur.clear();
    } else {
      cur += (cur.empty() ? "" : " ") + toks[i];
    }
  }
  segments.push_back(cur);
  AULabels y(aus.size(), 0);
  for (std::size_t i = 0; i < aus.size(); ++i)
    for (const auto& s : segments)
      if (s == aus[i].phrase) y[i] = 1;
  return y;
}

std::vector<std::string> caption_corpus(const std::vector<AuSpec>& aus) {
  std::vector<std::string> corpus;
  for (const auto& a : aus) {
    corpus.push_back(a.active);
    corpus.push_back(a.inactive);
    corpus.push_back(a.phrase);
  }
  corpus.push_back("a male female face with a neutral expression , and");
  return corpus;
}

// ---------------------------------------------------------------------------
// Rendering

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

double unit(std::uint64_t h, int k) {
  return static_cast<double>(mix_seed(h, static_cast<std::uint64_t>(k)) >> 11) * 0x1.0p-53;
}

double subject_blob_gain(int subject_id) {
  return 0.75 + 0.4 * unit(mix_seed(0xA11CE, static_cast<std::uint64_t>(subject_id)), 9);
}

void add_blob(Tensor<float>& img, double cy, double cx, double angle, const double* color, double amp,
              double scale) {
  const int S = img.dim(1);
  const double s_major = 4.0 * scale, s_minor = 2.0 * scale;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const int r = static_cast<int>(std::ceil(4 * s_major));
  const int y0 = std::max(0, static_cast<int>(cy) - r), y1 = std::min(S - 1, static_cast<int>(cy) + r);
  const int x0 = std::max(0, static_cast<int>(cx) - r), x1 = std::min(S - 1, static_cast<int>(cx) + r);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      const double g = std::exp(-0.5 * (u * u / (s_major * s_major) + v * v / (s_minor * s_minor)));
      for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(c) * S + y) * S + x] += static_cast<float>(amp * color[c] * g);
    }
}

}  // namespace

Tensor<float> subject_base_texture(int subject_id, int image_size) {
  const int S = image_size;
  const double scale = S / 64.0;
  const std::uint64_t h = mix_seed(0x5EB1EC7, static_cast<std::uint64_t>(subject_id));
  const double skin = 0.40 + 0.15 * unit(h, 1);
  const double bg = 0.10 + 0.08 * unit(h, 2);
  const bool male = gender_of_subject(subject_id) == "male";
  const double tint[3] = {male ? 0.0 : 0.07, 0.02, male ? 0.06 : -0.02};
  double cast[3];
  for (int c = 0; c < 3; ++c) cast[c] = 0.06 * (unit(h, 3 + c) - 0.5);
  const double fx = 1.0 + 2.0 * unit(h, 6), fy = 1.0 + 2.0 * unit(h, 7), phase = 6.2831853 * unit(h, 8);
  const double rx = 21.0 * (0.9 + 0.2 * unit(h, 10)) * scale, ry = 27.0 * scale;
  const double cx = 31.5 * scale, cy = 33.0 * scale;
  Tensor<float> img({3, S, S});
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double e = std::hypot((x - cx) / rx, (y - cy) / ry);
      const double mask = std::clamp((1.15 - e) / 0.3, 0.0, 1.0);
      const double pattern = 0.035 * std::sin(6.2831853 * (fx * x + fy * y) / S + phase);
      double eyes = 0;
      for (double ex : {cx - 12 * scale, cx + 12 * scale}) {
        const double d2 = (x - ex) * (x - ex) + (y - 25 * scale) * (y - 25 * scale);
        eyes -= 0.18 * std::exp(-d2 / (2 * 1.8 * 1.8 * scale * scale));
      }
      for (int c = 0; c < 3; ++c) {
        const double v = bg + (skin - bg) * mask + tint[c] + cast[c] + (pattern + eyes) * mask;
        img[(static_cast<std::size_t>(c) * S + y) * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

Tensor<float> render_sample(int subject_id, const AULabels& au_states, Rng& rng, const std::vector<AuSpec>& aus,
                            int image_size, double noise, double blob_amplitude) {
  if (au_states.size() != aus.size()) throw ConfigError("render_sample: AU state count mismatch");
  Tensor<float> img = subject_base_texture(subject_id, image_size);
  const int S = image_size;
  const double scale = S / 64.0;
  const double gain = subject_blob_gain(subject_id);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0), intensity(0.6, 1.0);
  for (std::size_t i = 0; i < aus.size(); ++i) {
    const double jy = jitter(rng), jx = jitter(rng), strength = intensity(rng);
    if (!au_states[i]) continue;
    const AuSpec& a = aus[i];
    const double amp = blob_amplitude * strength * gain;
    const double cy = (a.row + jy) * scale, mid = 31.5 * scale;
    add_blob(img, cy, mid + (a.offset + jx) * scale, a.angle, a.color, amp, scale);
    if (a.offset > 0) add_blob(img, cy, mid - (a.offset + jx) * scale, -a.angle, a.color, amp, scale);
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : img.data) {
    const double n = nd(rng) * noise;
    v = static_cast<float>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
  }
  return img;
}

Window site_window(const AuSpec& au, int image_size) {
  const double scale = image_size / 64.0;
  const int size = std::max(3, static_cast<int>(std::lround(5 * scale)));
  const int cy = static_cast<int>(std::lround(au.row * scale));
  const int cx = static_cast<int>(std::lround((31.5 + au.offset) * scale));
  return {std::clamp(cy - size / 2, 0, image_size - size), std::clamp(cx - size / 2, 0, image_size - size), size};
}

// ---------------------------------------------------------------------------
// Manifest and dataset files

std::string DatasetManifest::to_json() const {
  json subj = json::array();
  for (std::size_t i = 0; i < subjects.size(); ++i) subj.push_back({{"id", subjects[i]}, {"gender", genders[i]}});
  json j = {{"format", "vlfau-synthetic-v1"},
            {"sample_count", sample_count},
            {"au_count", au_count},
            {"au_codes", au_codes},
            {"subjects", subj},
            {"image", {{"channels", channels}, {"height", height}, {"width", width}}},
            {"vocabulary", vocabulary},
            {"rates", rates},
            {"seed", seed},
            {"coactivation", coactivation},
            {"noise", noise}};
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.sample_count = j.at("sample_count");
    m.au_count = j.at("au_count");
    m.au_codes = j.at("au_codes").get<std::vector<int>>();
    for (const auto& s : j.at("subjects")) {
      m.subjects.push_back(s.at("id"));
      m.genders.push_back(s.at("gender"));
    }
    m.channels = j.at("image").at("channels");
    m.height = j.at("image").at("height");
    m.width = j.at("image").at("width");
    m.vocabulary = j.at("vocabulary");
    m.rates = j.at("rates").get<std::vector<double>>();
    m.seed = j.at("seed");
    m.coactivation = j.value("coactivation", 0.0);
    m.noise = j.value("noise", 0.03);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (m.sample_count <= 0) throw IoError("manifest declares no samples");
  return m;
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string image_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.ten", id);
  return buf;
}

/// Linked AU pairs by FACS code (lead, partner).
const std::vector<std::pair<int, int>> kLinkedPairs = {{1, 2}, {6, 12}, {25, 26}, {4, 7}, {17, 24}};

}  // namespace

DatasetManifest generate_dataset(const SynthConfig& config, std::uint64_t seed, const std::string& out_dir) {
  const SynthConfig cfg = config.resolved();
  const auto aus = au_set(cfg.au_count);
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

  DatasetManifest m;
  m.sample_count = cfg.sample_count();
  m.au_count = cfg.au_count;
  for (const auto& a : aus) m.au_codes.push_back(a.code);
  for (int s = 0; s < cfg.subjects; ++s) {
    m.subjects.push_back(s);
    m.genders.push_back(gender_of_subject(s));
  }
  m.channels = 3;
  m.height = m.width = cfg.image_size;
  m.rates = cfg.rates;
  m.seed = seed;
  m.coactivation = cfg.coactivation;
  m.noise = cfg.noise;

  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (auto [lead, partner] : kLinkedPairs) {
    std::size_t li = aus.size(), pi = aus.size();
    for (std::size_t i = 0; i < aus.size(); ++i) {
      if (aus[i].code == lead) li = i;
      if (aus[i].code == partner) pi = i;
    }
    if (li < aus.size() && pi < aus.size()) links.emplace_back(li, pi);
  }

  std::ostringstream labels_csv, captions;
  labels_csv << "sample_id,subject_id,gender";
  for (int i = 0; i < cfg.au_count; ++i) labels_csv << ",au_" << i;
  labels_csv << "\n";

  for (int id = 0; id < m.sample_count; ++id) {
    const int subject = id / cfg.samples_per_subject;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AULabels y(aus.size());
    for (std::size_t i = 0; i < aus.size(); ++i) y[i] = u(rng) < cfg.rates[i] ? 1 : 0;
    for (auto [li, pi] : links) {
      const double draw = u(rng);
      if (y[li] && draw < cfg.coactivation) y[pi] = 1;
    }
    const std::string gender = gender_of_subject(subject);
    const Tensor<float> img = render_sample(subject, y, rng, aus, cfg.image_size, cfg.noise, cfg.blob_amplitude);
    write_ten1((root / "images" / image_name(id)).string(), img);

    labels_csv << id << "," << subject << "," << gender;
    for (int v : y) labels_csv << "," << v;
    labels_csv << "\n";
    const Captions c = compose_captions(y, gender, aus);
    captions << json{{"sample_id", id}, {"global", c.global}, {"locals", c.locals}}.dump() << "\n";
  }

  write_text(root / "labels.csv", labels_csv.str());
  write_text(root / "captions.jsonl", captions.str());
  Vocabulary::build(caption_corpus(aus)).save((root / m.vocabulary).string());
  write_text(root / "manifest.json", m.to_json());
  return m;
}

std::vector<int> Dataset::subject_of_samples() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.subject);
  return out;
}

Dataset load_dataset(const std::string& dir, bool load_images) {
  const fs::path root(dir);
  Dataset ds;
  ds.root = dir;
  ds.manifest = DatasetManifest::from_json(read_text(root / "manifest.json"));
  ds.vocab = Vocabulary::load((root / ds.manifest.vocabulary).string());
  const auto& cat = au_catalog();
  for (int code : ds.manifest.au_codes) {
    auto it = std::find_if(cat.begin(), cat.end(), [&](const AuSpec& a) { return a.code == code; });
    if (it == cat.end()) throw IoError("manifest names unknown AU code " + std::to_string(code));
    ds.aus.push_back(*it);
  }
  const int n = ds.manifest.au_count;
  if (static_cast<int>(ds.aus.size()) != n) throw IoError("manifest AU codes disagree with AU count");

  std::istringstream labels(read_text(root / "labels.csv"));
  std::string line;
  std::getline(labels, line);  // header
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != 3 + n) throw IoError("labels.csv: bad row: " + line);
    Sample s;
    try {
      s.id = std::stoi(cells[0]);
      s.subject = std::stoi(cells[1]);
      s.gender = cells[2];
      for (int i = 0; i < n; ++i) s.labels.push_back(std::stoi(cells[static_cast<std::size_t>(3 + i)]));
    } catch (const std::exception&) {
      throw IoError("labels.csv: unparsable row: " + line);
    }
    if (s.id != static_cast<int>(ds.samples.size())) throw IoError("labels.csv: sample ids must be 0..M-1 in order");
    ds.samples.push_back(std::move(s));
  }
  if (static_cast<int>(ds.samples.size()) != ds.manifest.sample_count) {
    throw IoError("labels.csv has " + std::to_string(ds.samples.size()) + " rows, manifest says " +
                  std::to_string(ds.manifest.sample_count));
  }

  std::istringstream caps(read_text(root / "captions.jsonl"));
  int row = 0;
  while (std::getline(caps, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const int id = j.at("sample_id");
      if (id != row || id >= static_cast<int>(ds.samples.size())) throw IoError("captions.jsonl out of order");
      ds.samples[static_cast<std::size_t>(id)].global_caption = j.at("global");
      ds.samples[static_cast<std::size_t>(id)].local_captions = j.at("locals").get<std::vector<std::string>>();
      if (static_cast<int>(ds.samples[static_cast<std::size_t>(id)].local_captions.size()) != n) {
        throw IoError("captions.jsonl: sample " + std::to_string(id) + " lacks one local caption per AU");
      }
    } catch (const json::exception& e) {
      throw IoError(std::string("captions.jsonl: ") + e.what());
    }
    ++row;
  }
  if (row != static_cast<int>(ds.samples.size())) throw IoError("captions.jsonl row count mismatch");

  if (load_images) {
    for (auto& s : ds.samples) {
      s.image = read_ten1((root / "images" / image_name(s.id)).string());
      if (s.image.shape != Shape{ds.manifest.channels, ds.manifest.height, ds.manifest.width}) {
        throw IoError("image " + std::to_string(s.id) + " has shape " + shape_str(s.image.shape));
      }
    }
  }
  return ds;
}

std::vector<std::vector<int>> split_folds(const std::vector<int>& subject_of_sample, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("fold count must be positive");
  std::vector<int> subjects(subject_of_sample.begin(), subject_of_sample.end());
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (static_cast<int>(subjects.size()) < k) {
    throw ConfigError("need at least " + std::to_string(k) + " subjects for " + std::to_string(k) +
                      " folds, have " + std::to_string(subjects.size()));
  }
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::map<int, int> fold_of;
  for (std::size_t i = 0; i < subjects.size(); ++i) fold_of[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < subject_of_sample.size(); ++i) {
    folds[static_cast<std::size_t>(fold_of[subject_of_sample[i]])].push_back(static_cast<int>(i));
  }
  return folds;
}

std::vector<double> occurrence_rates(const std::vector<AULabels>& labels) {
  if (labels.empty()) throw std::invalid_argument("occurrence rates of an empty split");
  const std::size_t n = labels[0].size();
  std::vector<double> counts(n, 0.0);
  for (const auto& y : labels) {
    if (y.size() != n) throw ShapeError("label rows differ in length");
    for (std::size_t i = 0; i < n; ++i) counts[i] += y[i] ? 1 : 0;
  }
  const double m = static_cast<double>(labels.size());
  std::vector<double> eps;
  for (double c : counts) eps.push_back(std::max(c / m, 1.0 / (2.0 * m)));
  return eps;
}

}  // namespace vlfau
