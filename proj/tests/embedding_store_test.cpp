#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "avdd/embedding_store.hpp"
#include "fixtures.hpp"

using namespace avdd;

namespace {

EmbeddingStore two_source_store() {
  EmbeddingStore store({{"a", Modality::visual, 2}, {"b", Modality::audio, 3}}, 2);
  store.add({"v1", SceneClass::from_name("park"), false, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}});
  return store;
}

EmbeddingStore six_source_store(std::size_t videos, bool with_augmented) {
  std::vector<SourceSpec> sources = {{"vit", Modality::visual, 3},  {"clip", Modality::visual, 2},
                                     {"places", Modality::visual, 4}, {"openl3", Modality::audio, 5},
                                     {"pann", Modality::audio, 1},  {"iov", Modality::audio, 2}};
  EmbeddingStore store(sources, 10);
  std::mt19937 rng(17);
  std::uniform_real_distribution<float> unit(-2.0f, 2.0f);
  for (std::size_t v = 0; v < videos; ++v) {
    for (bool aug : {false, true}) {
      if (aug && !with_augmented) continue;
      EmbeddingRecord r{"vid" + std::to_string(v), SceneClass::from_index(v % 10), aug, {}};
      r.values.resize(10 * store.width());
      for (auto& value : r.values) value = unit(rng);
      store.add(std::move(r));
    }
  }
  return store;
}

}  // namespace

TEST(EmbeddingStore, DataFileSizeFollowsLayout) {
  avdd::testing::TempDir dir;
  write_store(two_source_store(), dir.path());
  EXPECT_EQ(std::filesystem::file_size(dir / "data.bin"), 2u * (2 + 3) * 4);
  const std::string data = read_file(dir / "data.bin");
  // 1.0f little-endian is 00 00 80 3f.
  EXPECT_EQ(static_cast<unsigned char>(data[3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(data[2]), 0x80);
}

TEST(EmbeddingStore, IndexLayout) {
  auto store = two_source_store();
  store.add({"v2", SceneClass::from_name("bus"), true, std::vector<float>(10, 0.5f)});
  const auto index = nlohmann::json::parse(serialize_store_index(store));
  EXPECT_EQ(index["segments_per_video"], 2);
  EXPECT_EQ(index["sources"][1]["name"], "b");
  EXPECT_EQ(index["sources"][1]["modality"], "audio");
  EXPECT_EQ(index["videos"][1]["class"], "bus");
  EXPECT_EQ(index["videos"][1]["augmented"], true);
  EXPECT_EQ(index["videos"][1]["row_offset"], 2);
}

TEST(EmbeddingStore, RoundTripIsExact) {
  avdd::testing::TempDir dir;
  auto store = six_source_store(7, true);
  store.add({"odd", SceneClass::from_name("tram"), false, std::vector<float>(10 * store.width())});
  auto& values = const_cast<std::vector<float>&>(store.records().back().values);
  values[0] = std::numeric_limits<float>::denorm_min();
  values[1] = -0.0f;
  values[2] = std::numeric_limits<float>::max();
  values[3] = 1.0f / 3.0f;
  write_store(store, dir / "s1");
  const auto back = open_store(dir / "s1");
  ASSERT_EQ(back.size(), store.size());
  EXPECT_EQ(back.sources(), store.sources());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& a = store.records()[i];
    const auto& b = back.records()[i];
    EXPECT_EQ(a.video_id, b.video_id);
    EXPECT_EQ(a.augmented, b.augmented);
    EXPECT_EQ(a.scene, b.scene);
    ASSERT_EQ(a.values.size(), b.values.size());
    for (std::size_t k = 0; k < a.values.size(); ++k) {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(a.values[k]), std::bit_cast<std::uint32_t>(b.values[k]));
    }
  }
  write_store(back, dir / "s2");
  EXPECT_EQ(read_file(dir / "s1" / "data.bin"), read_file(dir / "s2" / "data.bin"));
  EXPECT_EQ(read_file(dir / "s1" / "index.json"), read_file(dir / "s2" / "index.json"));
}

TEST(EmbeddingStore, EmptyStoreIsValid) {
  avdd::testing::TempDir dir;
  write_store(EmbeddingStore(avdd::default_sources(), 10), dir.path());
  const auto back = open_store(dir.path());
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.width(), 1000u + 1024 + 2048 + 512 + 512 + 256);
  std::size_t n = 0;
  for (const auto& r : back.records()) n += r.values.size();
  EXPECT_EQ(n, 0u);
}

TEST(EmbeddingStore, WidthMismatchIsAFormatError) {
  avdd::testing::TempDir dir;
  // Data written for five sources, index then declares a sixth.
  auto six = six_source_store(2, false);
  std::vector<SourceSpec> five(six.sources().begin(), six.sources().end() - 1);
  EmbeddingStore store(five, 10);
  for (const auto& r : six.records()) {
    EmbeddingRecord copy{r.video_id, r.scene, r.augmented, {}};
    for (std::size_t seg = 0; seg < 10; ++seg) {
      const auto row = r.segment(seg, six.width());
      copy.values.insert(copy.values.end(), row.begin(), row.begin() + static_cast<long>(store.width()));
    }
    store.add(std::move(copy));
  }
  write_store(store, dir.path());
  auto index = nlohmann::json::parse(read_file(dir / "index.json"));
  index["sources"].push_back({{"name", "iov"}, {"modality", "audio"}, {"dim", 2}});
  write_file(dir / "index.json", index.dump());
  try {
    open_store(dir.path());
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("vid"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingStore, TruncatedDataNamesFirstAffectedVideo) {
  avdd::testing::TempDir dir;
  write_store(six_source_store(3, false), dir.path());
  std::string data = read_file(dir / "data.bin");
  data.resize(data.size() - 4);
  write_file(dir / "data.bin", data);
  try {
    open_store(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'vid2'"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingStore, CorruptOrMissingIndex) {
  avdd::testing::TempDir dir;
  write_store(six_source_store(1, false), dir.path());
  write_file(dir / "index.json", "{not json");
  EXPECT_THROW(open_store(dir.path()), FormatError);
  write_file(dir / "index.json", "{\"segments_per_video\":10}");
  EXPECT_THROW(open_store(dir.path()), FormatError);
  std::filesystem::remove(dir / "index.json");
  EXPECT_THROW(open_store(dir.path()), IoError);
}

TEST(EmbeddingStore, RefusesNonFiniteValues) {
  auto store = two_source_store();
  EmbeddingRecord bad{"nanvid", SceneClass::from_name("metro"), false, std::vector<float>(10, 1.0f)};
  bad.values[7] = std::numeric_limits<float>::quiet_NaN();
  try {
    store.add(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("nanvid"), std::string::npos);
  }
  bad.values[7] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(store.add(bad), ValidationError);
}

TEST(EmbeddingStore, RejectsWrongWidthAndDuplicates) {
  auto store = two_source_store();
  EXPECT_THROW(store.add({"short", SceneClass::from_name("park"), false, std::vector<float>(9)}), ValidationError);
  EXPECT_THROW(store.add({"v1", SceneClass::from_name("park"), false, std::vector<float>(10)}), ValidationError);
  EXPECT_NO_THROW(store.add({"v1", SceneClass::from_name("park"), true, std::vector<float>(10)}));
  EXPECT_THROW(EmbeddingStore({{"a", Modality::visual, 2}, {"a", Modality::audio, 3}}, 2), ValidationError);
  EXPECT_THROW(EmbeddingStore({{"a", Modality::visual, 0}}, 2), ValidationError);
}

TEST(Select, AudioWidthIsSumOfAudioDims) {
  const auto store = six_source_store(4, false);
  const auto view = select(store, Modality::audio, std::nullopt, false);
  EXPECT_EQ(view.width(), 5u + 1 + 2);
  std::vector<float> row(view.width());
  view.gather(0, row);
  const auto full = store.records()[0].segment(0, store.width());
  for (std::size_t i = 0; i < row.size(); ++i) EXPECT_EQ(row[i], full[9 + i]);
  EXPECT_EQ(select(store, Modality::visual, std::nullopt, false).width(), 3u + 2 + 4);
  EXPECT_EQ(select(store, std::nullopt, std::nullopt, false).width(), store.width());
}

TEST(Select, AugmentedRecordsExcludedOnRequest) {
  const auto store = six_source_store(5, true);
  const auto without = select(store, std::nullopt, std::nullopt, false);
  for (const auto& r : without.rows()) EXPECT_FALSE(r.record->augmented);
  EXPECT_EQ(without.size(), 50u);
  EXPECT_EQ(select(store, std::nullopt, std::nullopt, true).size(), 100u);
}

TEST(Select, TenSegmentVideoGivesTenRows) {
  const auto store = six_source_store(3, false);
  const auto view = select(store, std::nullopt, std::set<std::string>{"vid1", "nope"}, false);
  ASSERT_EQ(view.size(), 10u);
  for (std::size_t i = 0; i < view.size(); ++i) {
    EXPECT_EQ(view.rows()[i].record->video_id, "vid1");
    EXPECT_EQ(view.rows()[i].segment, i);
  }
  EXPECT_EQ(view.unknown_ids(), std::vector<std::string>{"nope"});
}
