#pragma once

// Region proposals and image embeddings. Each capability is an abstract
// backend plus a validation layer (detect / embed_image) that every caller
// goes through, so a misbehaving backend can never leak bad regions or
// wrong-sized vectors into retrieval.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "persona/embedding.hpp"
#include "persona/image.hpp"

namespace persona {

struct RegionOfInterest {
  BBox bbox;
  std::string label;
  double score = 0.0;
};

struct ImageInput {
  std::string bytes;
  std::string media_type = "image/png";
};

struct QueryInput {
  std::optional<ImageInput> image;
  std::string text;
};

struct Detections {
  std::vector<RegionOfInterest> regions;
  std::vector<std::string> warnings;
};

inline constexpr double kDefaultScoreThreshold = 0.1;

class Detector {
 public:
  virtual ~Detector() = default;
  // Backend output, unvalidated.
  virtual std::vector<RegionOfInterest> propose(
      const ImageInput& image, const std::vector<std::string>& classes) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector encode(const std::string& image_bytes) = 0;
};

// Runs the backend, drops regions with invalid boxes/scores or scores under
// the threshold (recording a warning for malformed ones), and sorts by
// descending score. Empty classes raise InvalidArgument; undecodable images
// raise DecodeError.
Detections detect(Detector& detector, const ImageInput& image,
                  const std::vector<std::string>& classes,
                  double score_threshold = kDefaultScoreThreshold);

// DimensionMismatch when the backend returns a vector of the wrong size.
EmbeddingVector embed_image(Embedder& embedder, const std::string& image_bytes,
                            int expected_dim);

// Precomputed regions and embeddings keyed by the sha256 of image bytes.
// File form: {"<sha256>": {"regions": [{"bbox": [...], "label": s, "score": f}],
//                          "embedding": [f, ...]}, ...}
class FixtureSet {
 public:
  FixtureSet() = default;
  static FixtureSet load(const std::filesystem::path& path);
  static FixtureSet parse(const std::string& json_text);
  std::string to_json() const;
  void save(const std::filesystem::path& path) const;

  void set_regions(const std::string& image_bytes, std::vector<RegionOfInterest> regions);
  void set_embedding(const std::string& image_bytes, EmbeddingVector embedding);

  const std::vector<RegionOfInterest>* regions_for(const std::string& sha256) const;
  const EmbeddingVector* embedding_for(const std::string& sha256) const;

 private:
  struct Entry {
    std::optional<std::vector<RegionOfInterest>> regions;
    std::optional<EmbeddingVector> embedding;
  };
  std::map<std::string, Entry> entries_;
};

// One region covering the whole image, label "object", score 1.0.
class WholeImageDetector final : public Detector {
 public:
  std::vector<RegionOfInterest> propose(const ImageInput& image,
                                        const std::vector<std::string>& classes) override;
};

// Echoes fixture regions; images without an entry yield no regions.
class FixtureDetector final : public Detector {
 public:
  explicit FixtureDetector(std::shared_ptr<const FixtureSet> fixtures)
      : fixtures_(std::move(fixtures)) {}
  std::vector<RegionOfInterest> propose(const ImageInput& image,
                                        const std::vector<std::string>& classes) override;

 private:
  std::shared_ptr<const FixtureSet> fixtures_;
};

// Deterministic pseudo-embedding: sha256(bytes) seeds a splitmix64 stream
// expanded to dim uniform values in [-1, 1).
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(int dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  EmbeddingVector encode(const std::string& image_bytes) override;

 private:
  int dim_;
  std::uint64_t seed_;
};

// Fixture echo; a missing entry is BackendUnavailable.
class LookupEmbedder final : public Embedder {
 public:
  explicit LookupEmbedder(std::shared_ptr<const FixtureSet> fixtures)
      : fixtures_(std::move(fixtures)) {}
  EmbeddingVector encode(const std::string& image_bytes) override;

 private:
  std::shared_ptr<const FixtureSet> fixtures_;
};

struct HttpEndpoint {
  std::string base_url;  // e.g. "http://127.0.0.1:8501"
  std::chrono::milliseconds timeout{5000};
};

// POST /detect {"image_b64", "classes"} -> {"regions": [...]}.
class HttpDetector final : public Detector {
 public:
  explicit HttpDetector(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<RegionOfInterest> propose(const ImageInput& image,
                                        const std::vector<std::string>& classes) override;

 private:
  HttpEndpoint endpoint_;
};

// POST /embed {"image_b64"} -> {"embedding": [...]}.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  EmbeddingVector encode(const std::string& image_bytes) override;

 private:
  HttpEndpoint endpoint_;
};

}  // namespace persona
