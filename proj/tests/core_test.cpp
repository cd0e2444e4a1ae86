#include <random>

#include <gtest/gtest.h>

#include "cgd/core.hpp"

namespace {

using cgd::segment_sentences;
using Sentences = std::vector<std::string>;

TEST(Segment, SplitsOnTerminalPunctuation) {
  EXPECT_EQ(segment_sentences("A dog runs. It is brown! Is it happy?"),
            (Sentences{"A dog runs.", "It is brown!", "Is it happy?"}));
}

TEST(Segment, KeepsTrailingTextWithoutTerminator) {
  EXPECT_EQ(segment_sentences("A dog runs. A cat sits"), (Sentences{"A dog runs.", "A cat sits"}));
}

TEST(Segment, DecimalPointIsNotABoundary) {
  EXPECT_EQ(segment_sentences("The sign says 3.5 miles. Then a road."),
            (Sentences{"The sign says 3.5 miles.", "Then a road."}));
}

TEST(Segment, AbbreviationsDoNotSplit) {
  EXPECT_EQ(segment_sentences("Mr. Smith waves. Fruit, e.g. apples, is on the table."),
            (Sentences{"Mr. Smith waves.", "Fruit, e.g. apples, is on the table."}));
}

TEST(Segment, ClosingQuotesStayWithTheSentence) {
  EXPECT_EQ(segment_sentences("The sign reads \"Stop.\" A car waits."),
            (Sentences{"The sign reads \"Stop.\"", "A car waits."}));
}

TEST(Segment, RepeatedTerminators) {
  EXPECT_EQ(segment_sentences("Wow!! Look... A bird."), (Sentences{"Wow!!", "Look...", "A bird."}));
}

TEST(Segment, DocumentedExamples) {
  EXPECT_EQ(segment_sentences("A cat. It sleeps."), (Sentences{"A cat.", "It sleeps."}));
  EXPECT_EQ(segment_sentences("Dr. Smith waves. He smiles!"),
            (Sentences{"Dr. Smith waves.", "He smiles!"}));
  EXPECT_EQ(cgd::join_sentences(Sentences{"One."}), "One.");
}

TEST(Segment, EmptyAndBlankInputs) {
  EXPECT_TRUE(segment_sentences("").empty());
  EXPECT_TRUE(segment_sentences("  \n\t ").empty());
}

TEST(Segment, NoWhitespaceAfterPeriodDoesNotSplit) {
  EXPECT_EQ(segment_sentences("See example.com for more."), (Sentences{"See example.com for more."}));
}

TEST(Join, SingleSpaceSeparator) {
  const Sentences s{"A dog runs.", "It is brown."};
  EXPECT_EQ(cgd::join_sentences(s), "A dog runs. It is brown.");
  EXPECT_EQ(cgd::join_sentences(Sentences{}), "");
}

TEST(Join, RejectsBlankSentences) {
  const Sentences s{"A dog runs.", "  "};
  EXPECT_THROW(cgd::join_sentences(s), cgd::InvalidInput);
}

// Generator for sentence lists the segmenter must round-trip: words drawn from
// a pool without terminators, each sentence closed by one of . ! ?
Sentences random_sentences(std::mt19937_64& rng) {
  static const char* kWords[] = {"a", "dog", "The", "red", "car", "sits", "near", "3", "trees",
                                 "(left)", "it's", "two", "x-ray", "café", "on", "grass,"};
  static const char* kEnds[] = {".", "!", "?", "...", ".\"", "?)"};
  std::uniform_int_distribution<int> n_sent(0, 6), n_words(1, 8);
  std::uniform_int_distribution<std::size_t> word(0, std::size(kWords) - 1),
      end(0, std::size(kEnds) - 1);
  Sentences out;
  for (int s = n_sent(rng); s > 0; --s) {
    std::string text;
    for (int w = n_words(rng); w > 0; --w) text += (text.empty() ? "" : " ") + std::string(kWords[word(rng)]);
    out.push_back(text + kEnds[end(rng)]);
  }
  return out;
}

TEST(SegmentProperty, RoundTripsJoinedSentences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto sentences = random_sentences(rng);
    ASSERT_EQ(segment_sentences(cgd::join_sentences(sentences)), sentences) << "trial " << trial;
  }
}

std::string normalize_space(std::string_view text) {
  std::string out;
  bool gap = false;
  for (char c : text) {
    if (cgd::detail::is_space(c)) {
      gap = true;
      continue;
    }
    if (gap && !out.empty()) out.push_back(' ');
    gap = false;
    out.push_back(c);
  }
  return out;
}

TEST(SegmentProperty, TotalOnArbitraryBytes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(0, 80), byte(0, 255);
  for (int trial = 0; trial < 5000; ++trial) {
    std::string text;
    for (int i = len(rng); i > 0; --i) text.push_back(static_cast<char>(byte(rng)));
    const auto pieces = segment_sentences(text);
    for (const auto& p : pieces) {
      ASSERT_FALSE(p.empty());
      ASSERT_EQ(std::string(cgd::detail::trim(p)), p);
    }
    // Re-joining reproduces the whitespace-normalized input.
    ASSERT_EQ(normalize_space(cgd::join_sentences(pieces)), normalize_space(text));
  }
}

cgd::Sentence sentence(std::string text, std::vector<double> logprobs) {
  cgd::Sentence s;
  s.text = std::move(text);
  s.token_logprobs = std::move(logprobs);
  s.tokens.assign(s.token_logprobs.size(), "t");
  return s;
}

TEST(Candidate, ExtendAssignsIndicesAndLineage) {
  cgd::Candidate root;
  auto a = root.extended(sentence("A.", {-1.0}), {0, 2}, 1, false);
  auto b = a.extended(sentence("B.", {-0.5, -0.5}), {1, 0}, 2, true);
  EXPECT_EQ(b.sentences[0].index, 1);
  EXPECT_EQ(b.sentences[1].index, 2);
  EXPECT_EQ(b.lineage_key, (cgd::LineageKey{{0, 2}, {1, 0}}));
  EXPECT_EQ(b.tokens_spent, 3);
  EXPECT_TRUE(b.finished);
  EXPECT_NO_THROW(cgd::validate(b));
  EXPECT_THROW(b.extended(sentence("C.", {-1.0}), {0, 0}, 1, false), cgd::InvalidState);
}

TEST(Candidate, ValidationRejectsBrokenInvariants) {
  cgd::Candidate c = cgd::Candidate{}.extended(sentence("A.", {-1.0}), {0, 0}, 1, false);
  c.lineage_key.clear();
  EXPECT_THROW(cgd::validate(c), cgd::InvalidInput);

  EXPECT_THROW(cgd::validate(sentence("A.", {0.1})), cgd::InvalidInput);
  EXPECT_THROW(cgd::validate(sentence("A.", {})), cgd::InvalidInput);
  auto s = sentence("A.", {-0.1});
  s.similarity = 1.5;
  EXPECT_THROW(cgd::validate(s), cgd::InvalidInput);
}

TEST(Config, DefaultsAndValidation) {
  cgd::DecodeConfig c;
  EXPECT_EQ(c.n_candidates, 3);
  EXPECT_EQ(c.m_samples, 3);
  EXPECT_DOUBLE_EQ(c.alpha, 0.99);
  EXPECT_DOUBLE_EQ(c.temperature, 0.2);
  EXPECT_EQ(c.top_k, 5);
  EXPECT_EQ(c.max_new_tokens, 500);
  EXPECT_NO_THROW(cgd::validate(c));

  auto bad = c;
  bad.alpha = 1.5;
  EXPECT_THROW(cgd::validate(bad), cgd::InvalidInput);
  bad = c;
  bad.m_samples = 0;
  EXPECT_THROW(cgd::validate(bad), cgd::InvalidInput);
  bad = c;
  bad.temperature = 0.0;
  EXPECT_THROW(cgd::validate(bad), cgd::InvalidInput);

  bad = c;
  bad.mode = cgd::DecodeMode::greedy;
  EXPECT_THROW(cgd::validate(bad), cgd::InvalidInput);
  const auto fixed = bad.normalized();
  EXPECT_EQ(fixed.n_candidates, 1);
  EXPECT_EQ(fixed.m_samples, 1);
  EXPECT_NO_THROW(cgd::validate(fixed));
}

TEST(Config, ModeNames) {
  for (auto m : {cgd::DecodeMode::cgd, cgd::DecodeMode::greedy, cgd::DecodeMode::sample})
    EXPECT_EQ(cgd::parse_decode_mode(cgd::to_string(m)), m);
  EXPECT_THROW(cgd::parse_decode_mode("beam"), cgd::InvalidInput);
}

TEST(Image, DigestMustBeLowercaseHex) {
  cgd::ImageRef img{"x", std::nullopt, std::string(64, 'a')};
  EXPECT_NO_THROW(cgd::validate(img));
  img.bytes_digest = std::string(64, 'A');
  EXPECT_THROW(cgd::validate(img), cgd::InvalidInput);
  EXPECT_THROW(cgd::validate(cgd::ImageRef{}), cgd::InvalidInput);
}

TEST(Annotated, LabelMustMatchSubsetRule) {
  cgd::AnnotatedResponse a;
  a.sentences = {"A dog.", "A cat."};
  a.gold_objects = {"dog"};
  a.mentioned_objects = {{"dog"}, {"cat"}};
  a.labels = {0, 1};
  EXPECT_NO_THROW(cgd::validate(a));
  a.labels = {0, 0};
  EXPECT_THROW(cgd::validate(a), cgd::InvalidInput);
}

}  // namespace
