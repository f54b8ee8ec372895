#include <catch2/catch_amalgamated.hpp>

#include "edet/identification.hpp"
#include "support.hpp"

using namespace edet;

namespace {

TypeScores random_scores(Rng& rng, int n_types, double scale = 3.0) {
  TypeScores ts;
  for (int i = 0; i < n_types; ++i)
    ts.scores["T" + std::to_string(i)] = rng.next_uniform(scale);
  ts.null_score = rng.next_uniform(scale);
  return ts;
}

std::set<std::string> random_gold(Rng& rng, const TypeScores& ts) {
  std::set<std::string> gold;
  for (const auto& [t, _] : ts.scores)
    if (rng.next_below(2) == 0) gold.insert(t);
  return gold;
}

/// FD check of a loss over TypeScores against its analytic gradient.
template <typename LossFn>
double check_score_grads(TypeScores scores, const LossFn& fn, const TypeScores& grad) {
  double worst = 0.0;
  const double eps = 1e-6;
  for (auto& [t, s] : scores.scores) {
    const double saved = s;
    s = saved + eps;
    const double hi = fn(scores);
    s = saved - eps;
    const double lo = fn(scores);
    s = saved;
    worst = std::max(worst, test::rel_err(grad.scores.at(t), (hi - lo) / (2 * eps)));
  }
  const double saved = scores.null_score;
  scores.null_score = saved + eps;
  const double hi = fn(scores);
  scores.null_score = saved - eps;
  const double lo = fn(scores);
  scores.null_score = saved;
  worst = std::max(worst, test::rel_err(grad.null_score, (hi - lo) / (2 * eps)));
  return worst;
}

}  // namespace

TEST_CASE("cloze prompt validation") {
  CHECK_NOTHROW(ClozePrompt("This text describes a [MASK] event."));
  CHECK_THROWS_AS(ClozePrompt("no mask here"), ValidationError);
  CHECK_THROWS_AS(ClozePrompt("[MASK] and [MASK]"), ValidationError);
  CHECK_THROWS_AS(ClozePrompt("attached[MASK] mask"), ValidationError);
  const ClozePrompt p;
  CHECK(p.words().size() == 6);
}

TEST_CASE("build_cloze_input places the mask inside the prompt segment") {
  ToyEncoder enc(12, 64, 1);
  for (const auto& w : {"he", "quit", "this", "text", "describes", "a", "event.", "what",
                        "happened:", "answer"})
    enc.register_word(w);
  Sentence s;
  s.id = "x";
  s.tokens = {"He", "quit"};
  const ClozePrompt p1;
  const auto in1 = build_cloze_input(s, p1, enc);
  REQUIRE(in1.mask_position.has_value());
  CHECK(*in1.mask_position >= in1.context_end);
  CHECK(in1.context_end == 2);
  CHECK(in1.word_to_subtoken == std::vector<int>{0, 1});

  const ClozePrompt p2("what happened: [MASK] answer");
  const auto in2 = build_cloze_input(s, p2, enc);
  CHECK(*in2.mask_position != *in1.mask_position);
  // identical context segment
  for (int i = 0; i < in1.context_end; ++i)
    CHECK(in1.subtoken_ids[std::size_t(i)] == in2.subtoken_ids[std::size_t(i)]);
}

TEST_CASE("score_event_types aggregates verbalizer logits and ignores unmapped tokens") {
  // rig an output vector directly: logits {hire:2.1, resign:1.5, none:1.0,
  // attack:0.3, report:3.0}; "report" maps to no type and is ignored
  ToyEncoder enc(8, 32, 2);
  for (const auto& w : {"hire", "resign", "none", "attack", "report"}) enc.register_word(w);
  Ontology onto;
  onto.types.push_back(EventTypeSpec{"Start-Position", {"hire"}, std::nullopt, {}});
  onto.types.push_back(EventTypeSpec{"End-Position", {"resign"}, std::nullopt, {}});
  onto.types.push_back(EventTypeSpec{"Attack", {"attack"}, std::nullopt, {}});
  const auto idx = VerbalizerIndex::build(onto, enc);

  EncoderOutput out;
  out.hidden = Eigen::MatrixXd::Zero(1, 8);
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(enc.vocab_size());
  logits(*enc.token_id("hire")) = 2.1;
  logits(*enc.token_id("resign")) = 1.5;
  logits(*enc.token_id("none")) = 1.0;
  logits(*enc.token_id("attack")) = 0.3;
  logits(*enc.token_id("report")) = 3.0;
  out.vocab_logits_at_mask = logits;

  const TypeScores ts = score_event_types(out, idx, AggregationKind::Avg);
  CHECK(ts.scores.at("Start-Position") == 2.1);
  CHECK(ts.scores.at("End-Position") == 1.5);
  CHECK(ts.scores.at("Attack") == 0.3);
  CHECK(ts.null_score == 1.0);
  CHECK(decode_identification(ts) == std::set<std::string>{"Start-Position", "End-Position"});

  // single verbalizer: every aggregation is the identity
  for (auto kind : {AggregationKind::Avg, AggregationKind::Max, AggregationKind::LogSumExp}) {
    const TypeScores one = score_event_types(out, idx, kind);
    CHECK(one.scores.at("Attack") == 0.3);
  }
}

TEST_CASE("verbalizer index fails at setup on unknown tokens") {
  ToyEncoder enc(8, 32, 2);
  enc.register_word("known");
  Ontology onto;
  onto.types.push_back(EventTypeSpec{"T", {"unknownword"}, std::nullopt, {}});
  CHECK_THROWS_AS(VerbalizerIndex::build(onto, enc), ValidationError);
}

TEST_CASE("decode_identification matches the set-comprehension oracle") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const TypeScores ts = random_scores(rng, 1 + int(rng.next_below(8)));
    std::set<std::string> oracle;
    for (const auto& [t, s] : ts.scores)
      if (s > ts.null_score) oracle.insert(t);
    CHECK(decode_identification(ts) == oracle);

    // argmax-set invariance under a constant shift of every logit
    const double c = rng.next_uniform(50.0);
    TypeScores shifted = ts;
    for (auto& [_, s] : shifted.scores) s += c;
    shifted.null_score += c;
    CHECK(decode_identification(shifted) == oracle);
  }
}

TEST_CASE("ties with NULL decode as negative") {
  TypeScores ts;
  ts.scores["A"] = 1.0;
  ts.null_score = 1.0;
  CHECK(decode_identification(ts).empty());
  ts.scores["A"] = 2.0;
  ts.scores["B"] = 0.0;
  ts.null_score = 1.0;
  CHECK(decode_identification(ts) == std::set<std::string>{"A"});
}

TEST_CASE("classification_probability is a softmax over the real types") {
  TypeScores ts;
  ts.scores["A"] = 0.7;
  ts.scores["B"] = 0.7;
  ts.null_score = 100.0;  // excluded from the softmax
  CHECK(classification_probability(ts, "A") == Catch::Approx(0.5).margin(1e-12));

  TypeScores one;
  one.scores["A"] = -3.0;
  CHECK(classification_probability(one, "A") == Catch::Approx(1.0).margin(1e-12));

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const TypeScores r = random_scores(rng, 2 + int(rng.next_below(6)));
    double total = 0.0;
    // independent recomputation oracle
    double denom = 0.0;
    for (const auto& [_, s] : r.scores) denom += std::exp(s);
    for (const auto& [t, s] : r.scores) {
      const double p = classification_probability(r, t);
      CHECK(test::rel_err(p, std::exp(s) / denom) < 1e-9);
      total += p;
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-9));
  }
  CHECK_THROWS_AS(classification_probability(ts, "Z"), ValidationError);
}

TEST_CASE("threshold_ce equal-logit cases give log 2") {
  TypeScores ts;
  ts.scores["A"] = 1.5;
  ts.null_score = 1.5;
  CHECK(threshold_ce_loss(ts, {"A"}) == Catch::Approx(0.693147).margin(1e-6));
  // NULL instance with a single negative at the NULL logit
  CHECK(threshold_ce_loss(ts, {}) == Catch::Approx(0.693147).margin(1e-6));
}

TEST_CASE("threshold_ce gradient matches finite differences") {
  Rng rng(500);
  for (int trial = 0; trial < 60; ++trial) {
    const TypeScores ts = random_scores(rng, 1 + int(rng.next_below(6)));
    const auto gold = random_gold(rng, ts);
    TypeScores grad;
    threshold_ce_loss(ts, gold, &grad);
    const double worst = check_score_grads(
        ts, [&](const TypeScores& x) { return threshold_ce_loss(x, gold); }, grad);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("threshold_ce monotonicity and stability") {
  Rng rng(42);
  const TypeScores base = random_scores(rng, 4);
  const std::set<std::string> gold = {"T0", "T1"};
  const double l0 = threshold_ce_loss(base, gold);

  TypeScores up_pos = base;
  up_pos.scores["T0"] += 0.5;  // raising a positive never increases the loss
  CHECK(threshold_ce_loss(up_pos, gold) <= l0 + 1e-12);

  TypeScores up_neg = base;
  up_neg.scores["T3"] += 0.5;  // raising a negative never decreases it
  CHECK(threshold_ce_loss(up_neg, gold) >= l0 - 1e-12);

  // finite at extreme logit magnitudes
  TypeScores wild;
  wild.scores["A"] = 1e4;
  wild.scores["B"] = -1e4;
  wild.null_score = 1e4;
  CHECK(std::isfinite(threshold_ce_loss(wild, {"A"})));
  CHECK(std::isfinite(threshold_ce_loss(wild, {})));
  CHECK(std::isfinite(margin_loss(wild, {"A"}, 1.0)));
}

TEST_CASE("decoded set equals the types whose pairwise probability beats 0.5") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const TypeScores ts = random_scores(rng, 1 + int(rng.next_below(5)));
    const auto decoded = decode_identification(ts);
    for (const auto& [t, s] : ts.scores) {
      const double pairwise = 1.0 / (1.0 + std::exp(ts.null_score - s));
      CHECK(decoded.count(t) == (pairwise > 0.5 ? 1u : 0u));
    }
  }
}

TEST_CASE("margin loss satisfied case and unit contribution") {
  TypeScores ts;
  ts.scores["A"] = 3.0;   // positive, above NULL by 2 >= margin
  ts.scores["B"] = -1.0;  // negative, below NULL by 2 >= margin
  ts.null_score = 1.0;
  CHECK(margin_loss(ts, {"A"}, 1.0) == 0.0);

  TypeScores tie;
  tie.scores["A"] = 1.0;
  tie.null_score = 1.0;
  // single term max(0, 1 - 0) = 1, averaged over 1 type
  CHECK(margin_loss(tie, {"A"}, 1.0) == Catch::Approx(1.0));
  CHECK_THROWS_AS(margin_loss(tie, {"A"}, 0.0), ValidationError);
}

TEST_CASE("margin loss subgradient matches finite differences away from kinks") {
  Rng rng(901);
  int checked = 0;
  while (checked < 40) {
    const TypeScores ts = random_scores(rng, 2 + int(rng.next_below(4)));
    const auto gold = random_gold(rng, ts);
    const double margin = 1.0;
    // skip instances near a hinge kink
    bool near_kink = false;
    for (const auto& [t, s] : ts.scores) {
      const double gap = gold.count(t) ? s - ts.null_score : ts.null_score - s;
      if (std::abs(margin - gap) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    TypeScores grad;
    margin_loss(ts, gold, margin, &grad);
    const double worst = check_score_grads(
        ts, [&](const TypeScores& x) { return margin_loss(x, gold, margin); }, grad);
    CHECK(worst < 1e-4);
    ++checked;
  }
}
