#pragma once

// Shared test helpers: scratch directories, synthetic images, and the
// brute-force retrieval oracle. Oracles here deliberately avoid the library's
// own distance code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/datagen.hpp"
#include "persona/image.hpp"
#include "persona/util.hpp"

namespace persona::testkit {

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("persona-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Image whose every pixel encodes its coordinates, so crops can be checked
// against a hand-sliced copy.
inline Image coordinate_image(int w, int h, int channels = 3, int salt = 0) {
  Image img(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>((x * 7 + y * 13 + c * 61 + salt) & 0xff);
  return img;
}

inline std::string png_bytes(int w, int h, int salt = 0) {
  return encode_png(coordinate_image(w, h, 3, salt));
}

inline EmbeddingVector random_vector(std::mt19937_64& rng, int dim, float lo = -1.f, float hi = 1.f) {
  std::uniform_real_distribution<float> u(lo, hi);
  EmbeddingVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = u(rng);
  return v;
}

struct OracleHit {
  std::string id;
  double distance;
};

// Full scan, plain loops, sort by (distance, id).
inline std::vector<OracleHit> brute_force_knn(const std::vector<ConceptRecord>& records,
                                              const EmbeddingVector& q, int k) {
  std::vector<OracleHit> all;
  for (const auto& r : records) {
    double acc = 0.0;
    for (int i = 0; i < q.size(); ++i) {
      const double d = static_cast<double>(r.embedding[i]) - static_cast<double>(q[i]);
      acc += d * d;
    }
    all.push_back({r.id, std::sqrt(acc)});
  }
  std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

inline ConceptRecord make_record(const std::string& id, std::vector<float> values,
                                 std::string category = "object") {
  ConceptRecord r;
  r.id = id;
  r.name = "⟨" + id + "⟩";
  r.category = std::move(category);
  r.embedding = Eigen::Map<EmbeddingVector>(values.data(), static_cast<Eigen::Index>(values.size()));
  return r;
}

// Box-annotated corpus on disk: `samples` images under dir, each with one to
// three boxes naming concepts from a pool of `concepts`. Also returns a
// matching annotation document for FileAnnotator.
struct SyntheticCorpus {
  std::vector<AnnotatedSample> samples;
  nlohmann::json annotations;
};

inline SyntheticCorpus make_corpus(const std::filesystem::path& dir, int samples, int concepts,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticCorpus out;
  out.annotations = {{"concepts", nlohmann::json::object()},
                     {"description", nlohmann::json::object()},
                     {"qa", nlohmann::json::object()}};
  for (int c = 0; c < concepts; ++c) {
    out.annotations["concepts"]["⟨c" + std::to_string(c) + "⟩"] = "concept number " + std::to_string(c);
  }
  const BBox slots[] = {{0.0, 0.0, 0.5, 0.5}, {0.5, 0.0, 1.0, 0.5}, {0.25, 0.5, 0.75, 1.0}};
  for (int s = 0; s < samples; ++s) {
    AnnotatedSample sample;
    sample.image_ref = "img" + std::to_string(s) + ".png";
    write_file_atomic(dir / sample.image_ref, png_bytes(24, 20, s));
    const int boxes = 1 + static_cast<int>(rng() % 3);
    std::string names;
    for (int b = 0; b < boxes; ++b) {
      const std::string name = "⟨c" + std::to_string((s + b * 7) % concepts) + "⟩";
      sample.boxes.push_back({slots[b], name, b == 0 ? "person" : "object"});
      names += (b ? " and " : "") + name;
    }
    sample.caption = "A photo of " + names + ".";
    out.annotations["description"][sample.image_ref] = "In this picture " + names + " are visible.";
    out.annotations["qa"][sample.image_ref] = "It looks ordinary.";
    out.samples.push_back(std::move(sample));
  }
  return out;
}

}  // namespace persona::testkit
