#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "data.hpp"
#include "error.hpp"
#include "test_util.hpp"

using namespace camb;

TEST(BoxMapping, ScalesRoundsAndClamps) {
  EXPECT_EQ(map_boxes_to_input({30, 50, 60, 100, 4}, {300, 500}, {224, 224}), (BoundingBox{13, 37, 27, 75, 4}));
  EXPECT_EQ(map_boxes_to_input({0, 0, 500, 300, 0}, {300, 500}, {224, 224}), (BoundingBox{0, 0, 224, 224, 0}));
  // A sliver narrower than one target pixel still covers one pixel.
  EXPECT_EQ(map_boxes_to_input({499, 10, 500, 11, 0}, {300, 500}, {224, 224}), (BoundingBox{223, 7, 224, 8, 0}));
  EXPECT_EQ(map_boxes_to_input({10, 10, 20, 20, 1}, {224, 224}, {224, 224}), (BoundingBox{10, 10, 20, 20, 1}));
}

TEST(BoxMapping, PropertyStaysInsideTarget) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const int h = 1 + static_cast<int>(rng() % 900), w = 1 + static_cast<int>(rng() % 900);
    const int x0 = static_cast<int>(rng() % static_cast<unsigned>(w)), y0 = static_cast<int>(rng() % static_cast<unsigned>(h));
    const int x1 = x0 + 1 + static_cast<int>(rng() % static_cast<unsigned>(w - x0));
    const int y1 = y0 + 1 + static_cast<int>(rng() % static_cast<unsigned>(h - y0));
    const auto b = map_boxes_to_input({x0, y0, x1, y1, 0}, {h, w}, {224, 224});
    EXPECT_GE(b.x_min, 0);
    EXPECT_GE(b.y_min, 0);
    EXPECT_LE(b.x_max, 224);
    EXPECT_LE(b.y_max, 224);
    EXPECT_LT(b.x_min, b.x_max);
    EXPECT_LT(b.y_min, b.y_max);
  }
}

TEST(Sampler, SortedDistinctDeterministic) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 1 + seed % 37, count = seed % (n + 1);
    const auto a = sample_indices(n, count, seed);
    EXPECT_EQ(a, sample_indices(n, count, seed));
    ASSERT_EQ(a.size(), count);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), count);
    for (std::size_t v : a) EXPECT_LT(v, n);
  }
  EXPECT_EQ(sample_indices(5, 5, 3), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_THROW(sample_indices(3, 4, 0), Error);
}

TEST(Sampler, MatchesStraightLineShuffle) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    std::vector<std::size_t> v(20);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 19; i >= 1; --i) std::swap(v[i], v[rng() % (i + 1)]);
    v.resize(7);
    std::sort(v.begin(), v.end());
    EXPECT_EQ(sample_indices(20, 7, seed), v);
  }
}

TEST(Annotations, JsonLineRoundTrip) {
  const auto a = parse_annotation_line(R"({"id":"img_1","class":65,"boxes":[[1,2,30,40],[5,6,7,8]]})");
  EXPECT_EQ(a.id, "img_1");
  EXPECT_EQ(a.class_index, 65);
  ASSERT_EQ(a.boxes.size(), 2u);
  EXPECT_EQ(a.boxes[0], (BoundingBox{1, 2, 30, 40, 65}));
  const auto b = parse_annotation_line(format_annotation_line(a));
  EXPECT_EQ(b.id, a.id);
  EXPECT_EQ(b.boxes, a.boxes);
}

TEST(Annotations, MalformedLinesAreParseErrors) {
  for (const char* bad : {"not json", "[]", R"({"class":1,"boxes":[]})", R"({"id":"a","class":-1,"boxes":[]})",
                          R"({"id":"a","class":1,"boxes":[[1,2,3]]})", R"({"id":"a","class":1,"boxes":[[5,5,5,9]]})"}) {
    try {
      parse_annotation_line(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParse) << bad;
    }
  }
}

TEST(Manifest, SkipsBadLinesAndMissingImages) {
  testutil::TempDir dir("manifest");
  for (const char* name : {"a.png", "b.jpg", "c.JPEG"}) std::ofstream(dir / name) << "x";
  {
    std::ofstream os(dir / "ann.jsonl");
    os << R"({"id":"c","class":2,"boxes":[[0,0,4,4]]})" << '\n'
       << R"({"id":"a","class":0,"boxes":[[0,0,4,4]]})" << '\n'
       << "\n"
       << "garbage\n"
       << R"({"id":"missing","class":0,"boxes":[[0,0,4,4]]})" << '\n'
       << R"({"id":"b.jpg","class":1,"boxes":[]})" << '\n';
  }
  const auto m = load_manifest(dir.path(), dir / "ann.jsonl", 0, 3);
  EXPECT_EQ(m.skipped_entries, 2);
  ASSERT_EQ(m.size, 3);
  EXPECT_EQ(m.samples[0].image_id, "a");
  EXPECT_EQ(m.samples[1].image_id, "b.jpg");
  EXPECT_EQ(m.samples[2].image_id, "c");
  EXPECT_EQ(m.samples[2].true_class, 2);
  EXPECT_EQ(m.source_name, "ann.jsonl");
  EXPECT_THROW(load_manifest(dir.path(), dir / "ann.jsonl", 0, 4), Error);
  EXPECT_THROW(load_manifest(dir.path(), dir / "nope.jsonl", 0, 1), Error);
  EXPECT_EQ(load_manifest(dir.path(), dir / "ann.jsonl", 5, 2).samples.size(), 2u);
}

TEST(Voc, ConvertsOneBasedInclusiveBoxes) {
  testutil::TempDir dir("voc");
  std::ofstream(dir / "synsets.txt") << "n000 zero\nn001 one, uno\nn002 two\n";
  std::ofstream(dir / "img7.xml") << R"(<annotation><filename>img7.JPEG</filename>
  <object><name>n001</name><bndbox><xmin>1</xmin><ymin>11</ymin><xmax>50</xmax><ymax>60</ymax></bndbox></object>
  <object><name>n002</name><bndbox><xmin>5</xmin><ymin>5</ymin><xmax>9</xmax><ymax>9</ymax></bndbox></object>
  <object><name>n001</name><bndbox><xmin>100</xmin><ymin>100</ymin><xmax>120</xmax><ymax>130</ymax></bndbox></object>
</annotation>)";
  std::ofstream(dir / "broken.xml") << "<annotation><object>";
  const auto synsets = read_synsets(dir / "synsets.txt");
  EXPECT_EQ(synsets, (std::vector<std::string>{"n000", "n001", "n002"}));
  const auto a = parse_voc_xml(dir / "img7.xml", synsets);
  EXPECT_EQ(a.id, "img7");
  EXPECT_EQ(a.class_index, 1);
  EXPECT_EQ(a.boxes, (std::vector<BoundingBox>{{0, 10, 50, 60, 1}, {99, 99, 120, 130, 1}}));

  const auto report = convert_voc_to_jsonl({dir.path()}, dir / "synsets.txt", dir / "out.jsonl");
  EXPECT_EQ(report.converted, 1);
  EXPECT_EQ(report.failed, 1);
  std::ifstream in(dir / "out.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const auto back = parse_annotation_line(line);
  EXPECT_EQ(back.id, "img7");
  EXPECT_EQ(back.boxes, a.boxes);
}

TEST(Voc, IntegerNamesWithoutSynsets) {
  testutil::TempDir dir("voc_int");
  std::ofstream(dir / "x.xml") << R"(<annotation><object><name>12</name>
  <bndbox><xmin>3</xmin><ymin>3</ymin><xmax>4</xmax><ymax>4</ymax></bndbox></object></annotation>)";
  const auto a = parse_voc_xml(dir / "x.xml", {});
  EXPECT_EQ(a.id, "x");
  EXPECT_EQ(a.class_index, 12);
  EXPECT_EQ(a.boxes, (std::vector<BoundingBox>{{2, 2, 4, 4, 12}}));
  std::ofstream(dir / "y.xml") << "<annotation><object><name>dog</name></object></annotation>";
  EXPECT_THROW(parse_voc_xml(dir / "y.xml", {}), Error);
}
