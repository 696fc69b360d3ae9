#pragma once

// The personal concept database: named concepts keyed by an image embedding.
// Writers are serialized; readers work on immutable snapshots.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "persona/embedding.hpp"

namespace persona {

struct ConceptRecord {
  std::string id;
  std::string name;
  std::string category;
  std::string description;
  std::string image_ref;
  EmbeddingVector embedding;
  std::int64_t created_at = 0;
  std::int64_t updated_at = 0;
};

bool operator==(const ConceptRecord& a, const ConceptRecord& b);

// Open/close markers wrapping every concept name, e.g. "⟨my dog⟩".
struct NameDelimiters {
  std::string open = "⟨";
  std::string close = "⟩";
};

// Fields left empty are not touched.
struct ConceptUpdate {
  std::optional<std::string> name;
  std::optional<std::string> description;
  std::optional<std::string> category;
  std::optional<std::string> image_ref;
  std::optional<EmbeddingVector> embedding;
};

// Immutable view. Row i of matrix() is records()[i].embedding.
class StoreSnapshot {
 public:
  StoreSnapshot(int dim, std::vector<ConceptRecord> records);

  int dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<ConceptRecord>& records() const { return records_; }
  const EmbeddingRows& matrix() const { return matrix_; }

  const ConceptRecord* find_by_id(const std::string& id) const;
  const ConceptRecord* find_by_name(const std::string& name) const;

 private:
  int dim_;
  std::vector<ConceptRecord> records_;
  EmbeddingRows matrix_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

using SnapshotPtr = std::shared_ptr<const StoreSnapshot>;

struct ManifestEntry {
  std::string id;
  std::string name;
  std::string category;
  std::string description;
  std::string image_ref;
  std::int64_t created_at = 0;
  std::int64_t updated_at = 0;
};

struct StoreManifest {
  int version = 1;
  int dim = kDefaultDim;
  std::vector<ManifestEntry> records;
};

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kVectorsFile = "vectors.bin";

struct StoreOptions {
  int dim = kDefaultDim;
  NameDelimiters delimiters;
  // Seeds the id generator; random_device when unset.
  std::optional<std::uint64_t> id_seed;
  std::function<std::int64_t()> clock;
};

class ConceptStore {
 public:
  explicit ConceptStore(StoreOptions options = {});

  ConceptStore(const ConceptStore&) = delete;
  ConceptStore& operator=(const ConceptStore&) = delete;

  int dim() const { return options_.dim; }
  const NameDelimiters& delimiters() const { return options_.delimiters; }

  ConceptRecord add_concept(const std::string& name, const std::string& category,
                            const std::string& description,
                            const std::string& image_ref,
                            const EmbeddingVector& embedding);
  ConceptRecord update_info(const std::string& id, const ConceptUpdate& update);
  ConceptRecord remove_concept(const std::string& id);
  // Puts back a complete record (id and timestamps kept), e.g. to undo a
  // removal. Same uniqueness and dimension rules as add_concept.
  void restore(const ConceptRecord& record);
  // Replaces the whole contents with a snapshot taken from this store.
  void reset(const StoreSnapshot& snapshot);

  ConceptRecord get_by_name(const std::string& name) const;
  ConceptRecord get_by_id(const std::string& id) const;
  std::vector<std::string> list_categories() const;
  std::vector<ConceptRecord> list() const;
  std::size_t size() const;

  SnapshotPtr snapshot() const;

  // Writes manifest.json and vectors.bin under dir; dead rows are dropped.
  void persist(const std::filesystem::path& dir) const;
  StoreManifest load(const std::filesystem::path& dir);

  // Throws InvalidArgument unless name is a non-empty delimiter-wrapped token.
  void validate_name(const std::string& name) const;

 private:
  struct Slot {
    ConceptRecord record;
    bool alive = true;
  };

  std::string next_id();
  std::int64_t now() const;
  std::size_t slot_of(const std::string& id) const;
  void compact_if_sparse();
  void rebuild_indices();

  StoreOptions options_;
  mutable std::mutex mu_;
  std::vector<Slot> slots_;
  std::size_t alive_ = 0;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::mt19937_64 id_rng_;
  mutable SnapshotPtr cached_;
};

// Manifest JSON text <-> struct. Parse errors raise CorruptManifest.
std::string manifest_to_json(const StoreManifest& manifest,
                             const std::string& vectors_sha256);
StoreManifest manifest_from_json(const std::string& text,
                                 std::string* vectors_sha256 = nullptr);

}  // namespace persona
