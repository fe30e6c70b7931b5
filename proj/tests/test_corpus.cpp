#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace tdg;
using tdg::oracle::data_dir;

namespace {

Document two_timex_doc() {
  Document d;
  d.id = "x";
  d.dct = "2020-01-01";
  d.sentences = {{0, {"Monday", "and", "Tuesday"}}};
  d.mentions = {{"t1", MentionKind::timex, 0, 0, 1}, {"t2", MentionKind::timex, 0, 2, 3}};
  return d;
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto dir = std::filesystem::temp_directory_path() / "tdg_corpus_tests";
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / name, content);
  return dir / name;
}

}  // namespace

TEST(ParseCorpus, EmptyFileGivesEmptyCorpus) { EXPECT_TRUE(parse_corpus(data_dir() / "empty.jsonl").empty()); }

TEST(ParseCorpus, SingleTimexFixture) {
  Corpus c = parse_corpus(data_dir() / "single_timex.jsonl");
  ASSERT_EQ(c.size(), 1u);
  ASSERT_EQ(c[0].gold_edges.size(), 1u);
  EXPECT_EQ(c[0].gold_edges[0].child, 0u);
  EXPECT_EQ(c[0].gold_edges[0].slot, Slot::timex_ref);
  EXPECT_TRUE(c[0].gold_edges[0].parent.is_meta(MetaNode::DCT));
}

TEST(ParseCorpus, MissingEventRefNormalizedToNoEvent) {
  Corpus c = parse_corpus(data_dir() / "event_without_ref.jsonl");
  const Document& d = c[0];
  auto e1 = *find_mention(d, "e1");
  bool found = false;
  for (const auto& e : d.gold_edges) {
    if (e.child == e1 && e.slot == Slot::event_ref) {
      EXPECT_TRUE(e.parent.is_meta(MetaNode::NO_EVENT));
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(ParseCorpus, MalformedLineReportsLineNumber) {
  auto p = temp_file("bad.jsonl", std::string(read_file(data_dir() / "single_timex.jsonl")) + "{not json\n");
  try {
    parse_corpus(p);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(ParseCorpus, DuplicateIdRejected) {
  const std::string line = read_file(data_dir() / "single_timex.jsonl");
  auto p = temp_file("dup.jsonl", line + line);
  EXPECT_THROW(parse_corpus(p), ValidationError);
}

TEST(ParseCorpus, CycleAbortsWithViolationList) {
  try {
    parse_corpus(data_dir() / "cyclic.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.violations().size(), 1u);
    EXPECT_NE(e.violations()[0].find("t1 -> t2 -> t1"), std::string::npos);
  }
}

TEST(ParseCorpus, RoundTripIsIdentity) {
  Corpus c = parse_corpus(data_dir() / "analyzer_fixture.jsonl");
  Corpus again = parse_corpus_text(serialize_corpus(c));
  EXPECT_EQ(serialize_corpus(again), serialize_corpus(c));
  ASSERT_EQ(again.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(again[i], c[i]);
}

TEST(ParseCorpus, RoundTripOnGeneratedCorpora) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig cfg;
    cfg.documents = 10;
    Corpus c = generate_synthetic_corpus(cfg, seed).corpus;
    EXPECT_EQ(parse_corpus_text(serialize_corpus(c)), c);
  }
}

TEST(ParseCorpus, TokensKeptVerbatim) {
  Corpus c = parse_corpus(data_dir() / "analyzer_fixture.jsonl");
  EXPECT_EQ(c[0].sentences[0].tokens[0], "Officials");
}

TEST(ValidateDocument, WellFormedFixtureIsClean) {
  for (const auto& d : parse_corpus(data_dir() / "analyzer_fixture.jsonl")) EXPECT_TRUE(validate_document(d).empty());
}

TEST(ValidateDocument, TwoTimexRefEdgesNamesTheTimex) {
  Document d = two_timex_doc();
  d.gold_edges = {{0, Slot::timex_ref, NodeRef::meta(MetaNode::DCT), std::nullopt},
                  {0, Slot::timex_ref, NodeRef::meta(MetaNode::ROOT), std::nullopt},
                  {1, Slot::timex_ref, NodeRef::meta(MetaNode::DCT), std::nullopt}};
  auto v = validate_document(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("t1"), std::string::npos);
}

TEST(ValidateDocument, TwoNodeCycleListed) {
  Document d = two_timex_doc();
  d.gold_edges = {{0, Slot::timex_ref, NodeRef::mention(1), std::nullopt},
                  {1, Slot::timex_ref, NodeRef::mention(0), std::nullopt}};
  auto v = validate_document(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("cycle"), std::string::npos);
  EXPECT_NE(v[0].find("t1 -> t2 -> t1"), std::string::npos);
}

TEST(ValidateDocument, StructuralViolations) {
  Document d = two_timex_doc();
  d.gold_edges = {{0, Slot::timex_ref, NodeRef::mention(0), std::nullopt},
                  {1, Slot::event_ref, NodeRef::meta(MetaNode::NO_EVENT), std::nullopt}};
  d.dct = "yesterday";
  d.mentions[1].end = 7;
  auto v = validate_document(d);
  EXPECT_GE(v.size(), 4u);
}

TEST(ValidateDocument, CycleOracleOnRandomGraphs) {
  // Brute-force closure decides acyclicity; the validator must agree.
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    Document d = oracle::random_document(rng, {6, 2, 2, false});
    auto g = oracle::random_prediction(rng, d);
    for (auto [child, slot] : oracle::slots_of(d)) d.gold_edges.push_back({child, slot, *g.at(child, slot), std::nullopt});
    const bool cyclic = oracle::has_cycle(d.mentions.size(), oracle::mention_edges(g));
    bool reported = false;
    for (const auto& s : validate_document(d)) reported |= s.find("cycle") != std::string::npos;
    EXPECT_EQ(reported, cyclic);
  }
}

TEST(DpLabels, TotalMapLoads) {
  Corpus c = parse_corpus(data_dir() / "analyzer_fixture.jsonl");
  DpLabelMap m = load_dp_labels(data_dir() / "analyzer_fixture.dp.tsv", c);
  EXPECT_EQ(m.size(), 9u);
  EXPECT_EQ(m.at("b", 2), ContentType::NA);
}

TEST(DpLabels, MissingSentenceNamed) {
  Corpus c = parse_corpus(data_dir() / "analyzer_fixture.jsonl");
  std::string tsv = read_file(data_dir() / "analyzer_fixture.dp.tsv");
  tsv.erase(tsv.find("b\t1\tD1\n"), 7);
  auto p = temp_file("missing.tsv", tsv);
  try {
    load_dp_labels(p, c);
    FAIL();
  } catch (const CoverageError& e) {
    EXPECT_NE(std::string(e.what()).find("(b, 1)"), std::string::npos) << e.what();
  }
}

TEST(DpLabels, UnknownTagRejected) {
  Corpus c = parse_corpus(data_dir() / "single_timex.jsonl");
  try {
    load_dp_labels(temp_file("m3.tsv", "d1\t0\tM3\n"), c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown content type"), std::string::npos);
  }
}

TEST(DpLabels, UnknownDocumentRejected) {
  Corpus c = parse_corpus(data_dir() / "single_timex.jsonl");
  EXPECT_THROW(load_dp_labels(temp_file("unk.tsv", "d1\t0\tM1\nzz\t0\tM1\n"), c), ValidationError);
}

TEST(DpLabels, SerializeRoundTrip) {
  Corpus c = parse_corpus(data_dir() / "analyzer_fixture.jsonl");
  DpLabelMap m = load_dp_labels(data_dir() / "analyzer_fixture.dp.tsv", c);
  EXPECT_EQ(load_dp_labels(temp_file("rt.tsv", serialize_dp_labels(m, c)), c), m);
}

TEST(Synth, SingleDocSingleTimexHasLegalParent) {
  SynthConfig cfg;
  cfg.documents = 1;
  cfg.sentences = {1, 1};
  cfg.timexes_per_sentence = {1, 1};
  cfg.events_per_sentence = {0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto data = generate_synthetic_corpus(cfg, seed);
    ASSERT_EQ(data.corpus[0].mentions.size(), 1u);
    const NodeRef p = data.corpus[0].gold_edges[0].parent;
    EXPECT_TRUE(p.is_meta(MetaNode::DCT) || p.is_meta(MetaNode::ROOT));
  }
}

TEST(Synth, DeterministicBytes) {
  SynthConfig cfg;
  cfg.documents = 30;
  auto a = generate_synthetic_corpus(cfg, 5), b = generate_synthetic_corpus(cfg, 5);
  EXPECT_EQ(serialize_corpus(a.corpus), serialize_corpus(b.corpus));
  EXPECT_EQ(serialize_dp_labels(a.labels, a.corpus), serialize_dp_labels(b.labels, b.corpus));
  EXPECT_NE(serialize_corpus(generate_synthetic_corpus(cfg, 6).corpus), serialize_corpus(a.corpus));
}

TEST(Synth, HistoricalTimexRootShare) {
  SynthConfig cfg;
  cfg.documents = 2000;
  auto data = generate_synthetic_corpus(cfg, 3);
  std::size_t d1 = 0, root = 0;
  for (const auto& doc : data.corpus) {
    for (const auto& e : doc.gold_edges) {
      if (e.slot != Slot::timex_ref || doc.mentions[e.child].kind != MentionKind::timex) continue;
      if (data.labels.at(doc.id, doc.mentions[e.child].sentence) != ContentType::D1) continue;
      ++d1;
      root += e.parent.is_meta(MetaNode::ROOT);
    }
  }
  ASSERT_GT(d1, 20u);
  EXPECT_NEAR(static_cast<double>(root) / d1, 0.66, 0.05) << root << "/" << d1;
}

TEST(Synth, GeneratedCorporaSatisfyInvariants) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.documents = 20;
    cfg.timexes_per_sentence = {0, 2};
    cfg.events_per_sentence = {0, 3};
    auto data = generate_synthetic_corpus(cfg, seed);
    for (const auto& doc : data.corpus) {
      EXPECT_TRUE(validate_document(doc).empty());
      std::size_t tref = 0, eref = 0, events = 0;
      for (const auto& m : doc.mentions) events += m.kind == MentionKind::event;
      for (const auto& e : doc.gold_edges) (e.slot == Slot::timex_ref ? tref : eref)++;
      EXPECT_EQ(tref, doc.mentions.size());
      EXPECT_EQ(eref, events);
    }
    data.labels.require_coverage(data.corpus);
  }
}

TEST(Synth, InfeasibleConfigRejected) {
  SynthConfig cfg;
  cfg.sentences = {0, 0};
  EXPECT_THROW(generate_synthetic_corpus(cfg, 0), Error);
  SynthConfig bad;
  bad.timex_dct[0] = 0.9;
  bad.timex_root[0] = 0.2;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Synth, ConfigJsonRoundTrip) {
  SynthConfig cfg;
  cfg.cue_variants = 7;
  cfg.event_dct[3] = 0.25;
  SynthConfig back = synth_config_from_json(synth_config_to_json(cfg));
  EXPECT_EQ(synth_config_to_json(back), synth_config_to_json(cfg));
  EXPECT_THROW(synth_config_from_json(Json{{"nope", 1}}), Error);
}
