#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sppe/grad_check.hpp"
#include "sppe/rng.hpp"
#include "sppe/transformer.hpp"

using namespace sppe;

using TensorD = Tensor<double>;
using TapeD = Tape<double>;

namespace {

ModelConfig desk_cfg(PEVariant pe) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.pe = pe;
  return cfg;
}

TensorD random_patches(const PatchLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  return TensorD::randn({static_cast<std::size_t>(layout.seq_len()),
                         static_cast<std::size_t>(layout.patch_dim())},
                        rng, 1.0);
}

// Permutes the non-CLS patch rows of the raw input.
TensorD permute_patches(const TensorD& patches, const std::vector<std::size_t>& perm) {
  TensorD out = TensorD::zeros(patches.shape);
  const std::size_t cols = patches.cols();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = patches.at(perm[i], j);
  }
  return out;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST_CASE("attention with identical keys and no bias averages the values") {
  TensorD q = TensorD::from({3, 2}, {1, 2, -1, 0.5, 3, 3});
  TensorD k = TensorD::from({4, 2}, {1, 1, 1, 1, 1, 1, 1, 1});
  TensorD v = TensorD::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  TensorD out = attention<double>(nullptr, q, k, v);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out.at(i, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(out.at(i, 1) == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("a huge bias entry saturates attention onto one value row") {
  Rng rng(5);
  TensorD q = TensorD::randn({3, 2}, rng, 1.0);
  TensorD k = TensorD::randn({3, 2}, rng, 1.0);
  TensorD v = TensorD::randn({3, 2}, rng, 1.0);
  TensorD r = TensorD::zeros({3, 3});
  r.at(1, 2) = 1e9;
  TensorD out = attention<double>(nullptr, q, k, v, r);
  CHECK(out.at(1, 0) == doctest::Approx(v.at(2, 0)).epsilon(1e-9));
  CHECK(out.at(1, 1) == doctest::Approx(v.at(2, 1)).epsilon(1e-9));
}

TEST_CASE("attention matches the direct Eq. 1 oracle with random bias") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.uniform_below(5);   // <= 6
    const std::size_t dk = 1 + rng.uniform_below(4);  // <= 4
    TensorD q = TensorD::randn({n, dk}, rng, 1.0);
    TensorD k = TensorD::randn({n, dk}, rng, 1.0);
    TensorD v = TensorD::randn({n, dk}, rng, 1.0);
    TensorD r = TensorD::randn({n, n}, rng, 1.0);
    TensorD out = attention<double>(nullptr, q, k, v, r);
    const std::vector<double> expected =
        oracles::attention_direct(*q.data, *k.data, *v.data, *r.data, n, dk, dk);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      CHECK(std::abs(out.at(i) - expected[i]) <= 1e-12);
    }
  }
}

TEST_CASE("attention rejects inconsistent shapes") {
  TensorD q = TensorD::zeros({3, 2});
  TensorD k = TensorD::zeros({4, 3});
  TensorD v = TensorD::zeros({4, 2});
  CHECK_THROWS_AS(attention<double>(nullptr, q, k, v), std::invalid_argument);
  TensorD k2 = TensorD::zeros({4, 2});
  TensorD bad_r = TensorD::zeros({3, 3});
  CHECK_THROWS_AS(attention<double>(nullptr, q, k2, v, bad_r),
                  std::invalid_argument);
}

TEST_CASE("attention gradients w.r.t. Q, K, V, R match finite differences") {
  for (int seed = 1; seed <= 20; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 31 + 7);
    const std::size_t n = 3 + rng.uniform_below(3);
    const std::size_t dk = 2 + rng.uniform_below(3);
    TensorD q = TensorD::randn({n, dk}, rng, 0.8, true);
    TensorD k = TensorD::randn({n, dk}, rng, 0.8, true);
    TensorD v = TensorD::randn({n, dk}, rng, 0.8, true);
    TensorD r = TensorD::randn({n, n}, rng, 0.8, true);
    const auto f = [&](TapeD* tape) {
      TensorD out = attention(tape, q, k, v, r);
      return sum_all(tape, mul(tape, out, out));
    };
    const GradCheckReport report = grad_check(f, {&q, &k, &v, &r});
    INFO("seed ", seed, " worst: ", report.worst);
    CHECK(report.pass);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("parameter spec covers the checkpoint contract") {
  const PatchLayout layout = PatchLayout::desk();
  const ModelConfig cfg = desk_cfg(PEVariant::LearnedRelative);
  auto model = Model<double>::init(cfg, layout, 1);
  // names unique, every spec present
  const auto specs = param_specs(cfg, layout);
  CHECK(specs.size() == model.params.named.size());
  for (const auto& spec : specs) {
    CHECK(model.params.has(spec.name));
    CHECK(model.params.get(spec.name).numel() == spec.count());
  }
  CHECK(model.params.has("block.0.rel.et"));
  CHECK(model.params.has("block.1.rel.ef"));
  CHECK_FALSE(model.params.has("pos.absolute"));
}

TEST_CASE("count_params reproduces the paper-scale parameter claims") {
  const PatchLayout layout = PatchLayout::paper();
  ModelConfig cfg = ModelConfig::paper();

  cfg.pe = PEVariant::Absolute;
  const ParamCountTable abs_table = count_params(cfg, layout);
  CHECK(abs_table.pe_subtotal == 190464);

  cfg.pe = PEVariant::Conditional;
  CHECK(count_params(cfg, layout).pe_subtotal == 38400);

  cfg.pe = PEVariant::LearnedRelative;
  CHECK(count_params(cfg, layout).pe_subtotal == 58368);

  // Allocation agrees with the spec-derived counts at desk scale.
  const PatchLayout desk = PatchLayout::desk();
  for (const PEVariant pe :
       {PEVariant::None, PEVariant::Absolute, PEVariant::ALiBi2D,
        PEVariant::TimeALiBi, PEVariant::LearnedRelative, PEVariant::Conditional,
        PEVariant::ConditionalPlusAbsolute}) {
    const ModelConfig dcfg = desk_cfg(pe);
    auto model = Model<double>::init(dcfg, desk, 1);
    CHECK(model.params.total_count() == count_params(dcfg, desk).total);
  }
}

TEST_CASE("pe=None: CLS logits invariant and patch outputs equivariant under "
          "permutation") {
  const PatchLayout layout = PatchLayout::desk();
  auto model = Model<double>::init(desk_cfg(PEVariant::None), layout, 7);
  const TensorD patches = random_patches(layout, 99);
  const EncoderOut<double> base = encoder_forward<double>(nullptr, model, patches);

  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(static_cast<std::size_t>(layout.seq_len()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    const EncoderOut<double> out =
        encoder_forward<double>(nullptr, model, permute_patches(patches, perm));
    CHECK(max_abs_diff(out.logits, base.logits) <= 1e-9);
    // per-patch rows permute by the same permutation (row 0 is CLS)
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t c = 0; c < base.seq.cols(); ++c) {
        CHECK(out.seq.at(i + 1, c) ==
              doctest::Approx(base.seq.at(perm[i] + 1, c)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("every positional variant breaks permutation invariance") {
  const PatchLayout layout = PatchLayout::desk();
  const TensorD patches = random_patches(layout, 4242);
  Rng rng(5);
  std::vector<std::size_t> perm(static_cast<std::size_t>(layout.seq_len()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  const TensorD permuted = permute_patches(patches, perm);

  for (const PEVariant pe :
       {PEVariant::Absolute, PEVariant::ALiBi2D, PEVariant::TimeALiBi,
        PEVariant::LearnedRelative, PEVariant::Conditional,
        PEVariant::ConditionalPlusAbsolute}) {
    auto model = Model<double>::init(desk_cfg(pe), layout, 7, 0.25);
    const EncoderOut<double> a = encoder_forward<double>(nullptr, model, patches);
    const EncoderOut<double> b = encoder_forward<double>(nullptr, model, permuted);
    INFO("variant ", std::string(to_string(pe)));
    CHECK(max_abs_diff(a.logits, b.logits) > 1e-3);
  }
}

TEST_CASE("time-only ALiBi: within-chunk permutation invariance holds exactly "
          "when absolute PE is absent, breaks when present") {
  const PatchLayout layout = PatchLayout::desk();
  const TensorD patches = random_patches(layout, 31337);

  // Within one time chunk: rotate the f_patches rows of chunk 2.
  std::vector<std::size_t> perm(static_cast<std::size_t>(layout.seq_len()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  const std::size_t f = static_cast<std::size_t>(layout.f_patches);
  const std::size_t chunk = 2;
  for (std::size_t j = 0; j < f; ++j) {
    perm[chunk * f + j] = chunk * f + (j + 1) % f;
  }
  const TensorD permuted = permute_patches(patches, perm);

  // TimeALiBi pairs the time-only bias with absolute embeddings; zeroing the
  // absolute table leaves the pure time-only configuration.
  auto model = Model<double>::init(desk_cfg(PEVariant::TimeALiBi), layout, 11, 0.25);
  auto& p = model.params.get("pos.absolute");
  std::fill(p.data->begin(), p.data->end(), 0.0);

  const EncoderOut<double> a = encoder_forward<double>(nullptr, model, patches);
  const EncoderOut<double> b = encoder_forward<double>(nullptr, model, permuted);
  CHECK(max_abs_diff(a.logits, b.logits) <= 1e-9);

  auto paired = Model<double>::init(desk_cfg(PEVariant::TimeALiBi), layout, 11, 0.25);
  const EncoderOut<double> c = encoder_forward<double>(nullptr, paired, patches);
  const EncoderOut<double> d = encoder_forward<double>(nullptr, paired, permuted);
  CHECK(max_abs_diff(c.logits, d.logits) > 1e-3);
}

TEST_CASE("encoder logits span the configured class count") {
  const PatchLayout layout = PatchLayout::desk();
  ModelConfig cfg = desk_cfg(PEVariant::Absolute);
  cfg.classes = 527;  // Audioset-size head on a desk-size trunk
  auto model = Model<double>::init(cfg, layout, 3);
  const EncoderOut<double> out =
      encoder_forward<double>(nullptr, model, random_patches(layout, 8));
  CHECK(out.logits.shape == Shape{1, 527});
}

TEST_CASE("encoder forward is deterministic with dropout disabled") {
  const PatchLayout layout = PatchLayout::desk();
  auto model = Model<double>::init(desk_cfg(PEVariant::Conditional), layout, 17);
  const TensorD patches = random_patches(layout, 5);
  const EncoderOut<double> a = encoder_forward<double>(nullptr, model, patches);
  const EncoderOut<double> b = encoder_forward<double>(nullptr, model, patches);
  CHECK(*a.logits.data == *b.logits.data);
}

TEST_CASE("NaN detection aborts with the failing block index") {
  const PatchLayout layout = PatchLayout::desk();
  auto model = Model<double>::init(desk_cfg(PEVariant::None), layout, 3);
  auto& w = model.params.get("block.1.mlp.w2");
  (*w.data)[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(
      encoder_forward<double>(nullptr, model, random_patches(layout, 2)),
      doctest::Contains("block 1"), NumericError);
}

TEST_CASE("encoder gradients match finite differences on a tiny model") {
  // One block, learned-relative bias: gradient flows through Q, the tables,
  // projections and layernorms all at once.
  PatchLayout layout{3, 2, 2, 2, true};
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.classes = 3;
  cfg.dropout = 0.0;
  cfg.pe = PEVariant::LearnedRelative;
  auto model = Model<double>::init(cfg, layout, 19);
  const TensorD patches = random_patches(layout, 77);

  std::vector<Tensor<double>*> handles;
  for (auto& [name, t] : model.params.named) handles.push_back(&t);
  const auto f = [&](TapeD* tape) {
    EncoderOut<double> out = encoder_forward(tape, model, patches);
    return softmax_xent_mean(tape, out.logits, {1});
  };
  const GradCheckReport report = grad_check(f, handles, 1e-5, 1e-4);
  INFO("worst: ", report.worst);
  CHECK(report.pass);
}

TEST_CASE("encoder gradients with PEG placement match finite differences") {
  PatchLayout layout{3, 2, 2, 2, true};
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.dim = 6;
  cfg.heads = 2;
  cfg.classes = 2;
  cfg.dropout = 0.0;
  cfg.pe = PEVariant::ConditionalPlusAbsolute;
  auto model = Model<double>::init(cfg, layout, 23);
  const TensorD patches = random_patches(layout, 78);

  std::vector<Tensor<double>*> handles;
  for (auto& [name, t] : model.params.named) handles.push_back(&t);
  const auto f = [&](TapeD* tape) {
    EncoderOut<double> out = encoder_forward(tape, model, patches);
    return softmax_xent_mean(tape, out.logits, {0});
  };
  const GradCheckReport report = grad_check(f, handles, 1e-5, 1e-4);
  INFO("worst: ", report.worst);
  CHECK(report.pass);
}
