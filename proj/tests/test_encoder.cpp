#include <catch2/catch_amalgamated.hpp>

#include "edet/encoder.hpp"
#include "edet/identification.hpp"
#include "support.hpp"

using namespace edet;

namespace {

ToyEncoder make_encoder(int dim = 16, int max_len = 48) {
  ToyEncoder enc(dim, max_len, 321);
  for (const auto& w : {"the", "rebels", "attacked", "convoy", "a", "this", "text", "describes",
                        "event.", "none", "hire", "lay", "off", "appointment"})
    enc.register_word(w);
  return enc;
}

EncodedInput simple_input(const ToyEncoder& enc, const std::vector<std::string>& words,
                          bool with_mask = false) {
  std::vector<int> prompt_ids;
  std::optional<int> mask_offset;
  if (with_mask) {
    mask_offset = 0;
    prompt_ids.push_back(enc.mask_id());
  }
  return assemble_input(enc, words, prompt_ids, mask_offset, {});
}

}  // namespace

TEST_CASE("encode is deterministic and shape-correct") {
  const ToyEncoder enc = make_encoder();
  const auto input = simple_input(enc, {"the", "rebels", "attacked"}, true);
  const auto a = enc.encode(input);
  const auto b = enc.encode(input);
  CHECK(a.hidden == b.hidden);
  REQUIRE(a.vocab_logits_at_mask.has_value());
  CHECK(*a.vocab_logits_at_mask == *b.vocab_logits_at_mask);
  CHECK(a.hidden.rows() == input.size());
  CHECK(a.hidden.cols() == enc.dim());
  CHECK(a.vocab_logits_at_mask->size() == enc.vocab_size());
}

TEST_CASE("multi-subtoken words keep a total, monotone word map") {
  const ToyEncoder enc = make_encoder();
  // "appointment" (11 chars) splits into two chunks
  const auto input = simple_input(enc, {"the", "appointment", "convoy"});
  CHECK(input.word_to_subtoken.size() == 3);
  CHECK(input.size() > 3);
  for (std::size_t w = 1; w < input.word_to_subtoken.size(); ++w)
    CHECK(input.word_to_subtoken[w] > input.word_to_subtoken[w - 1]);
  const auto out = enc.encode(input);
  CHECK(out.hidden.rows() == input.size());
  CHECK_FALSE(out.vocab_logits_at_mask.has_value());
}

TEST_CASE("unknown words map to UNK, known surfaces stay whole") {
  const ToyEncoder enc = make_encoder();
  CHECK(enc.tokenize_word("zzzunseen") == std::vector<int>{enc.unk_id(), enc.unk_id()});
  CHECK(enc.tokenize_word("Convoy") == std::vector<int>{*enc.token_id("convoy")});
}

TEST_CASE("add_token averages constituent embeddings and LM-head rows") {
  ToyEncoder enc = make_encoder();
  const int lay = *enc.token_id("lay");
  const int off = *enc.token_id("off");
  const int comp = enc.add_token("lay_off", {"lay", "off"});

  // verify component-wise via encode: embedding enters the features linearly,
  // so probe the raw state through a singleton input's hidden would be
  // indirect; instead check through the public JSON state.
  const auto state = enc.state_to_json();
  const auto emb = matrix_from_json(state.at("embeddings"));
  const auto lmw = matrix_from_json(state.at("lm_w"));
  for (int d = 0; d < kToyEmbedDim; ++d)
    CHECK(emb(comp, d) == Catch::Approx(0.5 * (emb(lay, d) + emb(off, d))).epsilon(1e-12));
  for (int d = 0; d < enc.dim(); ++d)
    CHECK(lmw(comp, d) == Catch::Approx(0.5 * (lmw(lay, d) + lmw(off, d))).epsilon(1e-12));

  // identity and symmetry cases
  const int one = enc.add_token("solo", {"lay"});
  const auto state2 = enc.state_to_json();
  const auto emb2 = matrix_from_json(state2.at("embeddings"));
  for (int d = 0; d < kToyEmbedDim; ++d) CHECK(emb2(one, d) == emb2(lay, d));
  const int twin = enc.add_token("twin", {"off", "off"});
  const auto state3 = enc.state_to_json();
  const auto emb3 = matrix_from_json(state3.at("embeddings"));
  for (int d = 0; d < kToyEmbedDim; ++d) CHECK(emb3(twin, d) == emb3(off, d));

  // duplicate surface returns the existing index
  CHECK(enc.add_token("lay_off", {"lay"}) == comp);
  CHECK_THROWS_AS(enc.add_token("nope", {"missingword"}), ValidationError);
}

TEST_CASE("context truncation preserves prompt segments") {
  ToyEncoder enc(8, 12, 5);
  for (const auto& w : {"w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9", "wa", "wb", "wc"})
    enc.register_word(w);
  std::vector<int> prompt_ids = {enc.mask_id(), *enc.token_id("w1"), *enc.token_id("w2")};
  std::vector<std::string> context = {"w3", "w4", "w5", "w6", "w7", "w8", "w9", "wa", "wb", "wc"};
  std::vector<std::string> warnings;
  auto saved = warn_sink();
  warn_sink() = [&](const std::string& m) { warnings.push_back(m); };
  const auto input = assemble_input(enc, context, prompt_ids, 0, {});
  warn_sink() = saved;
  CHECK(!warnings.empty());
  CHECK(input.size() == 12);
  CHECK(input.context_end == 9);  // 12 - 3 prompt subtokens
  CHECK(input.word_to_subtoken.size() == 9);
  // prompt ids intact at the tail
  CHECK(input.subtoken_ids[9] == enc.mask_id());
  CHECK(*input.mask_position == 9);

  // prompt alone exceeding the budget is a configuration error
  std::vector<int> huge(20, enc.mask_id());
  CHECK_THROWS_AS(assemble_input(enc, context, huge, 0, {}), ValidationError);
}

TEST_CASE("gradient flows through the trainable layers") {
  ToyEncoder enc = make_encoder(10, 32);
  const auto input = simple_input(enc, {"rebels", "attacked", "convoy"}, true);

  // probe loss: sum of hidden + sum of mask logits
  auto loss_fn = [&]() {
    const auto out = enc.encode(input);
    return out.hidden.sum() + out.vocab_logits_at_mask->sum();
  };
  std::unique_ptr<EncodeTrace> trace;
  const auto out = enc.encode_traced(input, trace);
  for (Param* p : enc.parameters()) p->zero_grad();
  const Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Ones(input.size(), enc.dim());
  const Eigen::VectorXd d_logits = Eigen::VectorXd::Ones(enc.vocab_size());
  enc.backward(input, *trace, d_hidden, &d_logits);

  for (Param* p : enc.parameters()) {
    INFO("param " << p->name);
    CHECK(p->grad.cwiseAbs().maxCoeff() > 0.0);  // gradient actually flows
    const double worst = test::check_param_grad(*p, p->grad, loss_fn, 16);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("checkpoint state round-trips bit-exactly") {
  ToyEncoder enc = make_encoder();
  enc.add_token("lay_off", {"lay", "off"});
  const auto j = enc.state_to_json();
  const std::string dumped = j.dump();
  const auto back = ToyEncoder::from_json(nlohmann::ordered_json::parse(dumped));
  CHECK(back->state_to_json().dump() == dumped);

  const auto input = simple_input(*back, {"the", "rebels", "attacked"}, true);
  const auto a = enc.encode(input);
  const auto b = back->encode(input);
  CHECK(a.hidden == b.hidden);
  CHECK(*a.vocab_logits_at_mask == *b.vocab_logits_at_mask);
}
