#include <gtest/gtest.h>

#include <atomic>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <thread>

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/retriever.hpp"
#include "persona/util.hpp"
#include "support.hpp"

using namespace persona;
using persona::testkit::TempDir;
using persona::testkit::random_vector;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

StoreOptions opts(int dim, std::uint64_t seed = 1) {
  StoreOptions o;
  o.dim = dim;
  o.id_seed = seed;
  return o;
}

}  // namespace

TEST(ConceptStore, AddThenRetrieveByName) {
  ConceptStore store(opts(768));
  std::mt19937_64 rng(1);
  const auto e = random_vector(rng, 768);
  const auto rec = store.add_concept("⟨my dog⟩", "dog",
                                     "A white and gray dog with long fur. He has black eyes.",
                                     "img/dog.jpg", e);
  EXPECT_EQ(rec.id.size(), 32u);
  const auto got = store.get_by_name("⟨my dog⟩");
  EXPECT_EQ(got, rec);
  EXPECT_EQ(got.description, "A white and gray dog with long fur. He has black eyes.");
  EXPECT_GE(got.updated_at, got.created_at);
}

TEST(ConceptStore, DimensionMismatchOnAdd) {
  ConceptStore store(opts(768));
  EXPECT_EQ(code_of([&] { store.add_concept("⟨x⟩", "c", "", "", EmbeddingVector::Zero(5)); }),
            ErrorCode::kDimensionMismatch);
  EXPECT_EQ(store.size(), 0u);
}

TEST(ConceptStore, ThousandDistinctConcepts) {
  ConceptStore store(opts(4));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    store.add_concept("⟨c" + std::to_string(i) + "⟩", "object", "", "", random_vector(rng, 4));
  }
  TempDir dir;
  store.persist(dir.path());
  std::size_t rows = 0;
  for (const auto& r : manifest_from_json(read_file(dir / "manifest.json")).records) {
    (void)r;
    ++rows;
  }
  EXPECT_EQ(store.size(), 1000u);
  EXPECT_EQ(rows, 1000u);
}

TEST(ConceptStore, DuplicateNameRejected) {
  ConceptStore store(opts(2));
  store.add_concept("⟨a⟩", "c", "", "", EmbeddingVector::Ones(2));
  EXPECT_EQ(code_of([&] { store.add_concept("⟨a⟩", "c", "", "", EmbeddingVector::Ones(2)); }),
            ErrorCode::kDuplicateName);
  // Case-sensitive.
  EXPECT_NO_THROW(store.add_concept("⟨A⟩", "c", "", "", EmbeddingVector::Ones(2)));
}

TEST(ConceptStore, NamesMustBeDelimited) {
  ConceptStore store(opts(2));
  for (const char* bad : {"dog", "⟨⟩", "⟨dog", "dog⟩", "⟨a⟨b⟩", ""}) {
    EXPECT_EQ(code_of([&] { store.add_concept(bad, "c", "", "", EmbeddingVector::Ones(2)); }),
              ErrorCode::kInvalidArgument)
        << bad;
  }
  StoreOptions custom = opts(2);
  custom.delimiters = {"<", ">"};
  ConceptStore angle(custom);
  EXPECT_NO_THROW(angle.add_concept("<sks>", "c", "", "", EmbeddingVector::Ones(2)));
}

TEST(ConceptStore, RejectsNonFiniteEmbedding) {
  ConceptStore store(opts(2));
  EmbeddingVector e(2);
  e << 1.0f, NAN;
  EXPECT_EQ(code_of([&] { store.add_concept("⟨a⟩", "c", "", "", e); }), ErrorCode::kNonFinite);
}

TEST(ConceptStore, UpdateChangesOnlyGivenFields) {
  std::int64_t t = 100;
  StoreOptions o = opts(2);
  o.clock = [&] { return t; };
  ConceptStore store(o);
  const auto before = store.add_concept("⟨my dog⟩", "dog", "favorite food is chicken.",
                                        "img/dog.jpg", EmbeddingVector::Ones(2));
  t = 250;
  ConceptUpdate u;
  u.description = "favorite food is beef.";
  const auto after = store.update_info(before.id, u);
  EXPECT_EQ(after.description, "favorite food is beef.");
  EXPECT_EQ(after.name, before.name);
  EXPECT_EQ(after.category, before.category);
  EXPECT_EQ(after.image_ref, before.image_ref);
  EXPECT_EQ(after.embedding, before.embedding);
  EXPECT_EQ(after.created_at, 100);
  EXPECT_EQ(after.updated_at, 250);
}

TEST(ConceptStore, EmptyUpdateTouchesOnlyTimestamp) {
  std::int64_t t = 10;
  StoreOptions o = opts(2);
  o.clock = [&] { return t; };
  ConceptStore store(o);
  auto before = store.add_concept("⟨a⟩", "c", "d", "i", EmbeddingVector::Ones(2));
  t = 20;
  auto after = store.update_info(before.id, {});
  EXPECT_EQ(after.updated_at, 20);
  after.updated_at = before.updated_at;
  EXPECT_EQ(after, before);
}

TEST(ConceptStore, RenameSemantics) {
  ConceptStore store(opts(2));
  const auto a = store.add_concept("⟨a⟩", "c", "", "", EmbeddingVector::Ones(2));
  store.add_concept("⟨b⟩", "c", "", "", EmbeddingVector::Ones(2));
  ConceptUpdate to_b;
  to_b.name = "⟨b⟩";
  EXPECT_EQ(code_of([&] { store.update_info(a.id, to_b); }), ErrorCode::kDuplicateName);
  ConceptUpdate to_z;
  to_z.name = "⟨z⟩";
  store.update_info(a.id, to_z);
  EXPECT_EQ(store.get_by_name("⟨z⟩").id, a.id);
  EXPECT_EQ(code_of([&] { store.get_by_name("⟨a⟩"); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.get_by_name(""); }), ErrorCode::kNotFound);
}

TEST(ConceptStore, UpdateUnknownIdIsNotFound) {
  ConceptStore store(opts(2));
  EXPECT_EQ(code_of([&] { store.update_info("nope", {}); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.remove_concept("nope"); }), ErrorCode::kNotFound);
}

TEST(ConceptStore, RemovedConceptNeverRetrieved) {
  ConceptStore store(opts(2));
  EmbeddingVector ea(2), eb(2);
  ea << 0, 0;
  eb << 10, 10;
  const auto a = store.add_concept("⟨a⟩", "c", "", "", ea);
  store.add_concept("⟨b⟩", "c", "", "", eb);
  store.remove_concept(a.id);
  for (const auto& h : knn(*store.snapshot(), ea, 5)) EXPECT_NE(h.concept_id, a.id);
}

TEST(ConceptStore, AddTenRemoveThree) {
  ConceptStore store(opts(2));
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    ids.push_back(store.add_concept("⟨" + std::to_string(i) + "⟩", "c", "", "",
                                    EmbeddingVector::Ones(2)).id);
  }
  std::size_t expected = ids.size();
  for (int i : {1, 4, 7}) {
    store.remove_concept(ids[i]);
    --expected;
  }
  EXPECT_EQ(store.size(), expected);
  EXPECT_EQ(store.list().size(), 7u);
}

TEST(ConceptStore, RestoreUndoesRemoval) {
  ConceptStore store(opts(2));
  const auto a = store.add_concept("⟨a⟩", "c", "d", "", EmbeddingVector::Ones(2));
  const auto removed = store.remove_concept(a.id);
  store.restore(removed);
  EXPECT_EQ(store.get_by_id(a.id), a);
  EXPECT_THROW(store.restore(removed), Error);
}

TEST(ConceptStore, ResetReturnsToSnapshot) {
  ConceptStore store(opts(2));
  const auto a = store.add_concept("⟨a⟩", "c", "d", "", EmbeddingVector::Ones(2));
  store.add_concept("⟨b⟩", "c", "", "", EmbeddingVector::Zero(2));
  const SnapshotPtr saved = store.snapshot();
  ConceptUpdate u;
  u.name = "⟨z⟩";
  store.update_info(a.id, u);
  store.remove_concept(a.id);
  store.add_concept("⟨a⟩", "other", "", "", EmbeddingVector::Ones(2));
  store.reset(*saved);
  EXPECT_EQ(store.list(), saved->records());
  EXPECT_EQ(store.get_by_name("⟨a⟩"), a);
  EXPECT_EQ(code_of([&] { store.get_by_name("⟨z⟩"); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.reset(StoreSnapshot(3, {})); }), ErrorCode::kDimensionMismatch);
}

TEST(ConceptStore, CategoriesDedupedAndSorted) {
  ConceptStore store(opts(2));
  EXPECT_TRUE(store.list_categories().empty());
  store.add_concept("⟨1⟩", "dog", "", "", EmbeddingVector::Ones(2));
  store.add_concept("⟨2⟩", "dog", "", "", EmbeddingVector::Ones(2));
  store.add_concept("⟨3⟩", "cat", "", "", EmbeddingVector::Ones(2));
  EXPECT_EQ(store.list_categories(), (std::vector<std::string>{"cat", "dog"}));
}

TEST(ConceptStore, CategoriesMatchSetUnionOracle) {
  ConceptStore store(opts(2));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    store.add_concept("⟨" + std::to_string(i) + "⟩", "cat" + std::to_string(rng() % 7), "", "",
                      EmbeddingVector::Ones(2));
  }
  std::set<std::string> oracle;
  for (const auto& r : store.list()) oracle.insert(r.category);
  EXPECT_EQ(store.list_categories(), std::vector<std::string>(oracle.begin(), oracle.end()));
  EXPECT_EQ(store.list_categories().size(), 7u);
}

TEST(ConceptStore, SnapshotIsolation) {
  ConceptStore store(opts(2));
  EXPECT_EQ(store.snapshot()->matrix().rows(), 0);
  const auto a = store.add_concept("⟨a⟩", "c", "old", "", EmbeddingVector::Ones(2));
  const auto snap = store.snapshot();
  ConceptUpdate u;
  u.description = "new";
  store.update_info(a.id, u);
  store.add_concept("⟨b⟩", "c", "", "", EmbeddingVector::Ones(2));
  store.remove_concept(a.id);
  ASSERT_EQ(snap->size(), 1u);
  EXPECT_EQ(snap->records()[0].description, "old");
  EXPECT_EQ(store.snapshot()->size(), 1u);
  EXPECT_EQ(store.snapshot()->records()[0].name, "⟨b⟩");
}

TEST(ConceptStore, SnapshotRowsAlignWithRecords) {
  ConceptStore store(opts(8));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    store.add_concept("⟨" + std::to_string(i) + "⟩", "c", "", "", random_vector(rng, 8));
  }
  const auto snap = store.snapshot();
  for (std::size_t i = 0; i < snap->size(); ++i) {
    for (int d = 0; d < 8; ++d) {
      EXPECT_EQ(snap->matrix()(static_cast<Eigen::Index>(i), d), snap->records()[i].embedding(d));
    }
  }
}

TEST(ConceptStore, NameUniquenessUnderRandomOperations) {
  ConceptStore store(opts(3, 77));
  std::mt19937_64 rng(77);
  std::map<std::string, std::string> model;  // id -> name
  for (int step = 0; step < 3000; ++step) {
    const std::string name = "⟨n" + std::to_string(rng() % 40) + "⟩";
    const int op = static_cast<int>(rng() % 3);
    try {
      if (op == 0) {
        const auto r = store.add_concept(name, "c", "", "", random_vector(rng, 3));
        model[r.id] = name;
      } else if (!model.empty()) {
        auto it = model.begin();
        std::advance(it, static_cast<long>(rng() % model.size()));
        if (op == 1) {
          ConceptUpdate u;
          u.name = name;
          store.update_info(it->first, u);
          it->second = name;
        } else {
          store.remove_concept(it->first);
          model.erase(it);
        }
      }
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::kDuplicateName);
    }
    if (step % 100 == 0) {
      std::set<std::string> names;
      for (const auto& r : store.list()) ASSERT_TRUE(names.insert(r.name).second);
      ASSERT_EQ(names.size(), model.size());
    }
  }
  std::set<std::string> names;
  for (const auto& [id, name] : model) {
    EXPECT_EQ(store.get_by_id(id).name, name);
    names.insert(name);
  }
  EXPECT_EQ(names.size(), store.size());
}

TEST(ConceptStore, ConcurrentReadersDuringWrites) {
  ConceptStore store(opts(4));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    store.add_concept("⟨" + std::to_string(i) + "⟩", "c", "", "", random_vector(rng, 4));
  }
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!stop) {
      const auto snap = store.snapshot();
      for (std::size_t i = 0; i < snap->size(); ++i) {
        for (int d = 0; d < 4; ++d) {
          if (snap->matrix()(static_cast<Eigen::Index>(i), d) != snap->records()[i].embedding(d)) ++bad;
        }
      }
    }
  });
  std::mt19937_64 wrng(9);
  for (int i = 20; i < 400; ++i) {
    const auto r = store.add_concept("⟨" + std::to_string(i) + "⟩", "c", "", "", random_vector(wrng, 4));
    if (i % 3 == 0) store.remove_concept(r.id);
  }
  stop = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(Persistence, RoundTripIsIdentity) {
  ConceptStore store(opts(16));
  std::mt19937_64 rng(21);
  for (int i = 0; i < 200; ++i) {
    store.add_concept("⟨r" + std::to_string(i) + "⟩", "cat" + std::to_string(i % 5),
                      i % 3 ? "desc " + std::to_string(i) : "", "images/" + std::to_string(i) + ".png",
                      random_vector(rng, 16, -1e3f, 1e3f));
  }
  // Removals exercise tombstones; they must not reach disk.
  store.remove_concept(store.list()[5].id);
  TempDir dir;
  store.persist(dir.path());
  ConceptStore loaded(opts(16));
  loaded.load(dir.path());
  EXPECT_EQ(loaded.list(), store.list());
  EXPECT_EQ(loaded.size(), 199u);
}

TEST(Persistence, EmptyStoreRoundTrip) {
  ConceptStore store(opts(768));
  TempDir dir;
  store.persist(dir.path());
  ConceptStore loaded(opts(768));
  loaded.load(dir.path());
  EXPECT_EQ(loaded.size(), 0u);
}

TEST(Persistence, TruncatedVectorsAreCorrupt) {
  ConceptStore store(opts(4));
  store.add_concept("⟨a⟩", "c", "", "", EmbeddingVector::Ones(4));
  TempDir dir;
  store.persist(dir.path());
  const std::string bytes = read_file(dir / "vectors.bin");
  write_file_atomic(dir / "vectors.bin", bytes.substr(0, bytes.size() - 3));
  ConceptStore loaded(opts(4));
  EXPECT_EQ(code_of([&] { loaded.load(dir.path()); }), ErrorCode::kCorruptManifest);
}

TEST(Persistence, MismatchedCountIsCorruptEvenWithoutChecksum) {
  ConceptStore store(opts(4));
  store.add_concept("⟨a⟩", "c", "", "", EmbeddingVector::Ones(4));
  store.add_concept("⟨b⟩", "c", "", "", EmbeddingVector::Zero(4));
  TempDir dir;
  store.persist(dir.path());
  // Manifest lists two records; vectors.bin rewritten with one row and the
  // checksum field dropped, so only the count check can catch it.
  EmbeddingRows one(1, 4);
  one.setOnes();
  write_file_atomic(dir / "vectors.bin", encode_vector_file(one));
  auto manifest = manifest_from_json(read_file(dir / "manifest.json"));
  write_file_atomic(dir / "manifest.json", manifest_to_json(manifest, ""));
  ConceptStore loaded(opts(4));
  EXPECT_EQ(code_of([&] { loaded.load(dir.path()); }), ErrorCode::kCorruptManifest);
}

TEST(Persistence, WrongDimOnLoad) {
  ConceptStore store(opts(4));
  TempDir dir;
  store.persist(dir.path());
  ConceptStore loaded(opts(8));
  EXPECT_EQ(code_of([&] { loaded.load(dir.path()); }), ErrorCode::kDimensionMismatch);
}

TEST(Persistence, BadManifestIsCorrupt) {
  TempDir dir;
  write_file_atomic(dir / "manifest.json", "{not json");
  write_file_atomic(dir / "vectors.bin", "");
  ConceptStore loaded(opts(4));
  EXPECT_EQ(code_of([&] { loaded.load(dir.path()); }), ErrorCode::kCorruptManifest);
}

TEST(Persistence, MissingFilesAreIoError) {
  TempDir dir;
  ConceptStore loaded(opts(4));
  EXPECT_EQ(code_of([&] { loaded.load(dir / "absent"); }), ErrorCode::kIoError);
}

TEST(Persistence, ManifestLayout) {
  StoreOptions o = opts(2);
  o.clock = [] { return std::int64_t{5}; };
  ConceptStore store(o);
  store.add_concept("⟨a⟩", "dog", "d", "i.png", EmbeddingVector::Ones(2));
  TempDir dir;
  store.persist(dir.path());
  const auto doc = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(doc["version"], 1);
  EXPECT_EQ(doc["dim"], 2);
  ASSERT_EQ(doc["records"].size(), 1u);
  const auto& r = doc["records"][0];
  for (const char* key : {"id", "name", "category", "description", "image_ref", "created_at", "updated_at"}) {
    EXPECT_TRUE(r.contains(key)) << key;
  }
  EXPECT_FALSE(r.contains("embedding"));
  EXPECT_EQ(doc["vectors_sha256"], sha256_hex(read_file(dir / "vectors.bin")));
}
