#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "emrkg/corpus.hpp"
#include "test_support.hpp"

namespace emrkg {
namespace {

std::u32string U(std::string_view s) { return utf8::decode(s); }

// Text whose [280, 291) slice is the annotated surface from the brat example.
std::string text_with_surface_at_280() {
  std::string text;
  for (int i = 0; i < 280; ++i) text += "文";
  text += "右侧肩背部隐痛不适两周";
  text += "。";
  return text;
}

TEST(ParseAnn, BratExampleLine) {
  const auto text = text_with_surface_at_280();
  const auto doc = parse_ann("T1\tdisease 280 291\t右侧肩背部隐痛不适两周\n", text, EntitySchema{});
  ASSERT_EQ(doc.spans.size(), 1u);
  EXPECT_EQ(doc.spans[0].id, "T1");
  EXPECT_EQ(doc.spans[0].label, "Disease");
  EXPECT_EQ(doc.spans[0].start, 280u);
  EXPECT_EQ(doc.spans[0].end, 291u);
  EXPECT_EQ(doc.spans[0].surface.size(), 11u);
  EXPECT_EQ(doc.spans[0].surface, U("右侧肩背部隐痛不适两周"));
}

TEST(ParseAnn, EmptyAnnGivesNoSpans) {
  const auto doc = parse_ann("", "患者无不适。", EntitySchema{});
  EXPECT_TRUE(doc.spans.empty());
  EXPECT_EQ(doc.text.size(), 6u);
}

TEST(ParseAnn, OffsetsCountCharactersNotBytes) {
  const auto doc = parse_ann("T1\tSymptom 2 4\t呕吐\n", "伴有呕吐", EntitySchema{});
  ASSERT_EQ(doc.spans.size(), 1u);
  EXPECT_EQ(doc.spans[0].start, 2u);
}

TEST(ParseAnn, ErrorKinds) {
  const EntitySchema schema;
  const std::string text = "伴有呕吐";
  const auto code_of = [&](const std::string& ann) {
    try {
      parse_ann(ann, text, schema);
    } catch (const Error& e) {
      return std::string(errc_name(e.code()));
    }
    return std::string("ok");
  };
  EXPECT_EQ(code_of("T1\tSymptom 2 5\t呕吐x\n"), "OffsetOutOfBounds");
  EXPECT_EQ(code_of("T1\tSymptom 2 4\t恶心\n"), "SurfaceMismatch");
  EXPECT_EQ(code_of("T1\tFood 2 4\t呕吐\n"), "UnknownLabel");
  EXPECT_EQ(code_of("T1\tSymptom 2 4\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom 2\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom two 4\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom -2 4\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom 4 2\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom 2 3;3 4\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("X1\tSymptom 2 4\t呕吐\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom 2 4\t呕吐\nT1\tSymptom 0 1\t伴\n"), "MalformedLine");
  EXPECT_EQ(code_of("T1\tSymptom 2 4\t呕吐\nR1\tCause Arg1:T1 Arg2:T1\n#1\tnote\n"), "ok");
}

TEST(ParseAnn, OverlapRejectsLaterSpan) {
  ValidationReport report;
  const auto doc = parse_ann("T1\tSymptom 2 4\t呕吐\nT2\tDisease 1 3\t有呕\n", "伴有呕吐", EntitySchema{},
                             report, "d1");
  ASSERT_EQ(doc.spans.size(), 1u);
  EXPECT_EQ(doc.spans[0].id, "T1");
  ASSERT_EQ(report.rejected.size(), 1u);
  EXPECT_EQ(report.rejected[0].span.id, "T2");
}

TEST(Segment, SingleDelimiter) {
  const auto doc = parse_ann("", "甲。乙", EntitySchema{});
  const auto segs = segment(doc);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].text, U("甲。"));
  EXPECT_EQ(segs[1].text, U("乙"));
}

TEST(Segment, HardWrapArithmetic) {
  std::string text;
  for (int i = 0; i < 120; ++i) text += "字";
  const auto segs = segment(parse_ann("", text, EntitySchema{}), 50);
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_EQ(segs[0].text.size(), 50u);
  EXPECT_EQ(segs[1].text.size(), 50u);
  EXPECT_EQ(segs[2].text.size(), 20u);
}

TEST(Segment, WrapPointMovesBeforeEntity) {
  std::string text;
  for (int i = 0; i < 60; ++i) text += (i >= 48 && i < 53) ? "病" : "字";
  const auto doc = parse_ann("T1\tDisease 48 53\t病病病病病\n", text, EntitySchema{});
  const auto segs = segment(doc, 50);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].text.size(), 48u);
  EXPECT_TRUE(segs[0].spans.empty());
  ASSERT_EQ(segs[1].spans.size(), 1u);
  const auto& s = segs[1].spans[0];
  EXPECT_EQ(segs[1].text.substr(s.start, s.length()), doc.spans[0].surface);
  EXPECT_EQ(s.start, 0u);
}

TEST(Segment, EntityLongerThanMaxLenIsUnsplittable) {
  const auto doc = parse_ann("T1\tDisease 0 6\t原发性肝细胞\n", "原发性肝细胞癌", EntitySchema{});
  EXPECT_THROW(
      {
        try {
          segment(doc, 4);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), Errc::UnsplittableEntity);
          throw;
        }
      },
      Error);
}

TEST(Segment, NewlinesAreDroppedDelimiters) {
  const auto segs = segment(parse_ann("", "甲\n\n乙丙\r\n", EntitySchema{}));
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].text, U("甲"));
  EXPECT_EQ(segs[1].text, U("乙丙"));
  EXPECT_EQ(segs[1].offset, 3u);
}

TEST(Segment, DelimiterInsideEntityDoesNotSplit) {
  const auto doc = parse_ann("T1\tTreatment 1 4\t甲；乙\n", "行甲；乙治疗。", EntitySchema{});
  const auto segs = segment(doc);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].spans.size(), 1u);
}

TEST(ToBio, DefinitionOfBio) {
  const Segment seg{U("伴腹痛甚好"), {{"Symptom", 1, 4}}, 0};
  const auto s = to_bio(seg);
  EXPECT_EQ(s.tags, (std::vector<std::string>{"O", "B-Symptom", "I-Symptom", "I-Symptom", "O"}));
  const auto plain = to_bio(Segment{U("无"), {}, 0});
  EXPECT_EQ(plain.tags, std::vector<std::string>{"O"});
}

TEST(ToBio, AdjacentSameTypeSpansStaySeparate) {
  const Segment seg{U("呕吐腹泻"), {{"Symptom", 0, 2}, {"Symptom", 2, 4}}, 0};
  const auto s = to_bio(seg);
  EXPECT_EQ(s.tags, (std::vector<std::string>{"B-Symptom", "I-Symptom", "B-Symptom", "I-Symptom"}));
  EXPECT_EQ(from_bio(s), seg.spans);
}

TEST(ToBio, OverlapIsRejected) {
  const Segment seg{U("呕吐腹泻"), {{"Symptom", 0, 3}, {"Symptom", 2, 4}}, 0};
  EXPECT_THROW(to_bio(seg), Error);
}

TEST(FromBio, Examples) {
  BioSentence s{U("患肝癌者"), {"O", "B-Disease", "I-Disease", "O"}};
  EXPECT_EQ(from_bio(s), (std::vector<TypedSpan>{{"Disease", 1, 3}}));
  BioSentence o{U("无"), {"O"}};
  EXPECT_TRUE(from_bio(o).empty());
}

TEST(FromBio, MalformedSequences) {
  EXPECT_THROW(from_bio(BioSentence{U("甲乙"), {"I-Disease", "O"}}), Error);
  EXPECT_THROW(from_bio(BioSentence{U("甲乙"), {"B-Symptom", "I-Disease"}}), Error);
  EXPECT_THROW(from_bio(BioSentence{U("甲乙"), {"O", "X-Disease"}}), Error);
  EXPECT_THROW(from_bio(BioSentence{U("甲乙"), {"O"}}), Error);
}

TEST(CorpusProperty, ParseSegmentBioRoundTrip) {
  const EntitySchema schema;
  Rng rng(20240501);
  for (int iter = 0; iter < 300; ++iter) {
    const auto rd = testing::random_document(rng, schema);
    const auto doc = parse_ann(rd.ann, rd.txt, schema);
    for (const auto& s : doc.spans) {
      EXPECT_EQ(doc.text.substr(s.start, s.end - s.start), s.surface);
    }
    std::multiset<std::pair<std::string, std::u32string>> before;
    for (const auto& s : doc.spans) before.insert({s.label, s.surface});

    const auto segs = segment(doc, 20);
    std::multiset<std::pair<std::string, std::u32string>> after;
    for (const auto& seg : segs) {
      EXPECT_LE(seg.text.size(), 20u);
      const auto bio = to_bio(seg);
      EXPECT_EQ(from_bio(bio), seg.spans);
      for (const auto& s : seg.spans) after.insert({s.type, seg.text.substr(s.start, s.length())});
    }
    EXPECT_EQ(before, after);
  }
}

TEST(SplitDataset, Proportions) {
  const auto make = [](std::size_t n) {
    std::vector<BioSentence> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back({std::u32string(1, U'a' + (i % 26)), {"O"}});
    return v;
  };
  auto s10 = split_dataset(make(10), 1);
  EXPECT_EQ(s10.train.size(), 8u);
  EXPECT_EQ(s10.validation.size(), 1u);
  EXPECT_EQ(s10.test.size(), 1u);
  auto s100 = split_dataset(make(100), 1);
  EXPECT_EQ(s100.train.size(), 80u);
  EXPECT_EQ(s100.validation.size(), 10u);
  EXPECT_EQ(s100.test.size(), 10u);
  auto s15 = split_dataset(make(15), 1);
  EXPECT_EQ(s15.train.size() + s15.validation.size() + s15.test.size(), 15u);
  EXPECT_EQ(s15.validation.size(), 2u);
  EXPECT_THROW(split_dataset(make(9), 1), Error);
}

TEST(SplitDataset, PartitionAndDeterminism) {
  std::vector<BioSentence> v;
  for (int i = 0; i < 57; ++i) v.push_back({utf8::decode(std::to_string(i)), std::vector<std::string>(std::to_string(i).size(), "O")});
  const auto a = split_dataset(v, 42);
  const auto b = split_dataset(v, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  std::set<std::u32string> seen;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const auto& s : *part) EXPECT_TRUE(seen.insert(s.chars).second);
  }
  EXPECT_EQ(seen.size(), v.size());
  const auto c = split_dataset(v, 43);
  EXPECT_NE(a.train, c.train);
}

TEST(BioFile, WriteReadPreservesSentencesAndMask) {
  const EntitySchema schema;
  Rng rng(5);
  std::vector<BioSentence> sentences;
  for (int i = 0; i < 50; ++i) sentences.push_back(testing::random_bio(rng, schema));
  sentences[0].chars[0] = kMaskChar;
  std::stringstream ss;
  write_bio(ss, sentences);
  EXPECT_NE(ss.str().find("[MASK]\t"), std::string::npos);
  EXPECT_EQ(read_bio(ss), sentences);
}

TEST(BioFile, RejectsLinesWithoutTab) {
  std::stringstream ss("甲 O\n");
  EXPECT_THROW(read_bio(ss), Error);
}

}  // namespace
}  // namespace emrkg
