#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "sppe/checkpoint.hpp"
#include "sppe/patching.hpp"
#include "sppe/rng.hpp"
#include "sppe/synthdata.hpp"
#include "sppe/training.hpp"

using namespace sppe;

namespace {

// Fast fixture: tiny patches and a tiny model.
const PatchLayout kTinyLayout{4, 2, 8, 4, true};

ModelConfig tiny_cfg(PEVariant pe, int classes = 2) {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.classes = classes;
  cfg.dropout = 0.0;
  cfg.pe = pe;
  return cfg;
}

template <typename T>
std::vector<Sample<T>> make_samples(const SynthTask& task) {
  std::vector<Sample<T>> out;
  const auto specs = gen_task(task);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Sample<T> s;
    s.patches = patchify<T>(specs[i].spec, task.layout);
    s.label = specs[i].label;
    s.id = "sample/" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("lr schedule: warmup endpoints, decay and continuity") {
  TrainConfig paper = TrainConfig::paper();
  CHECK(lr_at(0, paper) == 0.0);
  CHECK(lr_at(30000, paper) == doctest::Approx(5e-4).epsilon(1e-15));
  const double decay = paper.resolved_decay();
  for (long k = 1; k <= 5; ++k) {
    CHECK(lr_at(30000 + k, paper) ==
          doctest::Approx(5e-4 * std::pow(decay, k)).epsilon(1e-12));
  }
  // continuity at the boundary
  CHECK(lr_at(30000, paper) ==
        doctest::Approx(lr_at(30001, paper) / decay).epsilon(1e-12));
  // halfway through warmup
  CHECK(lr_at(15000, paper) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, paper), std::invalid_argument);

  // explicit decay override
  TrainConfig cfg;
  cfg.total_steps = 100;
  cfg.warmup_steps = 10;
  cfg.peak_lr = 1.0;
  cfg.decay_rate = 0.5;
  CHECK(lr_at(12, cfg) == doctest::Approx(0.25));

  // auto decay reaches peak/10 at total_steps
  TrainConfig autodec;
  autodec.total_steps = 1000;
  autodec.warmup_steps = 100;
  autodec.peak_lr = 1e-3;
  CHECK(lr_at(1000, autodec) == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("paper presets carry the documented schedule constants") {
  const TrainConfig paper = TrainConfig::paper();
  CHECK(paper.total_steps == 290000);
  CHECK(paper.warmup_steps == 30000);
  CHECK(paper.peak_lr == 5e-4);
  CHECK(paper.batch_size == 64);
  CHECK(paper.checkpoint_interval == 10000);
  CHECK(paper.swa_count == 10);
  const TrainConfig rel = TrainConfig::paper_learned_relative();
  CHECK(rel.batch_size == 32);
  CHECK(rel.total_steps == 470000);
}

TEST_CASE("one Adam step matches the hand-computed recurrence") {
  // Single parameter w = 2, loss = w^2, so g = 4.
  Tensor<double> w = Tensor<double>::from({1}, {2.0}, true);
  Adam<double> opt({w});
  Tape<double> tape;
  Tensor<double> loss = mul(&tape, w, w);
  tape.backward(loss);

  const double g = 4.0;
  const double m = 0.1 * g;              // (1-beta1) g
  const double v = 0.001 * g * g;        // (1-beta2) g^2
  const double mhat = m / (1.0 - 0.9);   // t = 1
  const double vhat = v / (1.0 - 0.999);
  const double lr = 0.05;
  const double expected = 2.0 - lr * mhat / (std::sqrt(vhat) + 1e-8);

  opt.step(lr);
  CHECK(w.at(0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("Adam with lr 0 leaves parameters bit-unchanged") {
  Rng rng(3);
  Tensor<float> w = Tensor<float>::randn({4, 4}, rng, 1.0, true);
  const std::vector<float> before = *w.data;
  for (std::size_t i = 0; i < w.numel(); ++i) (*w.grad)[i] = 1.0f;
  Adam<float> opt({w});
  opt.step(0.0);
  CHECK(*w.data == before);
}

TEST_CASE("BCE of saturated correct predictions is ~0") {
  Tensor<double> logits = Tensor<double>::from({1, 4}, {20, -20, 20, -20});
  Tensor<double> targets = Tensor<double>::from({1, 4}, {1, 0, 1, 0});
  Tensor<double> loss = bce_with_logits_mean<double>(nullptr, logits, targets);
  CHECK(loss.at(0) <= 1e-8);
  CHECK(loss.at(0) >= 0.0);
}

TEST_CASE("train_step: lr 0 leaves the model unchanged; loss is the batch mean") {
  SynthTask task;
  task.layout = kTinyLayout;
  task.count = 8;
  task.seed = 5;
  auto samples = make_samples<double>(task);
  auto model = Model<double>::init(tiny_cfg(PEVariant::Absolute), kTinyLayout, 1);

  std::vector<Tensor<double>> handles;
  for (auto& [n, t] : model.params.named) handles.push_back(t);
  Adam<double> opt(handles);

  std::vector<const Sample<double>*> batch;
  for (const auto& s : samples) batch.push_back(&s);

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.peak_lr = 1.0;
  cfg.warmup_steps = 0;
  cfg.decay_rate = 1.0;
  cfg.loss = LossKind::CeSoftmax;

  const std::vector<double> before = *model.params.get("head.w").data;
  // warmup_steps=0 with step 0 -> lr = peak * decay^0 ... use explicit zero lr
  TrainConfig zero_cfg = cfg;
  zero_cfg.peak_lr = 1e-300;  // effectively zero update
  const double loss = train_step(model, opt, batch, 1, zero_cfg, nullptr);
  CHECK(loss > 0.0);

  // manual batch-mean cross-check
  double expected = 0.0;
  for (const auto* s : batch) {
    EncoderOut<double> out = encoder_forward<double>(nullptr, model, s->patches);
    Tensor<double> l = softmax_xent_mean<double>(nullptr, out.logits, {s->label});
    expected += l.at(0);
  }
  expected /= static_cast<double>(batch.size());
  CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("checkpoint format: golden bytes") {
  Checkpoint ckpt;
  ckpt.step = 7;
  CheckpointTensor t;
  t.name = "w";
  t.dims = {2};
  t.data = {1.0f, -2.0f};
  ckpt.tensors.push_back(t);

  const std::filesystem::path path = "golden.sppe";
  save_checkpoint(path, ckpt);

  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});

  const std::vector<unsigned char> expected = {
      'S', 'P', 'P', 'E',          // magic
      1, 0, 0, 0,                  // version u32
      1, 0, 0, 0,                  // tensor count u32
      1, 0,                        // name length u16
      'w',                         // name
      1,                           // rank u8
      2, 0, 0, 0, 0, 0, 0, 0,      // dim u64
      0x00, 0x00, 0x80, 0x3f,      // 1.0f LE
      0x00, 0x00, 0x00, 0xc0,      // -2.0f LE
      7, 0, 0, 0, 0, 0, 0, 0,      // step u64
  };
  CHECK(bytes == expected);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint write -> read -> write produces byte-identical files") {
  auto model = Model<float>::init(tiny_cfg(PEVariant::LearnedRelative), kTinyLayout, 9);
  const Checkpoint ckpt = to_checkpoint(model.params, 42);
  save_checkpoint("ck_a.sppe", ckpt);
  const Checkpoint loaded = load_checkpoint("ck_a.sppe");
  CHECK(loaded.step == 42);
  save_checkpoint("ck_b.sppe", loaded);
  std::ifstream a("ck_a.sppe", std::ios::binary), b("ck_b.sppe", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(a)), {});
  const std::string bb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ba == bb);
  CHECK_FALSE(ba.empty());
  std::filesystem::remove("ck_a.sppe");
  std::filesystem::remove("ck_b.sppe");
}

TEST_CASE("checkpoint loader rejects malformed files") {
  std::ofstream("bad.sppe", std::ios::binary) << "SPPX garbage";
  CHECK_THROWS_WITH_AS(load_checkpoint("bad.sppe"), doctest::Contains("magic"),
                       DataError);
  CHECK_THROWS_AS(load_checkpoint("missing.sppe"), DataError);
  std::filesystem::remove("bad.sppe");
}

TEST_CASE("swa_average: identity, pairwise mean, and the mean oracle") {
  auto model = Model<float>::init(tiny_cfg(PEVariant::Absolute), kTinyLayout, 11);
  const Checkpoint a = to_checkpoint(model.params, 10);

  SUBCASE("identical checkpoints average to themselves") {
    const Checkpoint avg = swa_average({a, a, a});
    CHECK(avg.step == 10);
    for (std::size_t t = 0; t < a.tensors.size(); ++t) {
      CHECK(avg.tensors[t].data == a.tensors[t].data);
    }
  }

  SUBCASE("two checkpoints: elementwise (x+y)/2, step = max") {
    auto model2 = Model<float>::init(tiny_cfg(PEVariant::Absolute), kTinyLayout, 12);
    const Checkpoint b = to_checkpoint(model2.params, 20);
    const Checkpoint avg = swa_average({a, b});
    CHECK(avg.step == 20);
    for (std::size_t t = 0; t < a.tensors.size(); ++t) {
      for (std::size_t i = 0; i < a.tensors[t].data.size(); ++i) {
        const double expected = (static_cast<double>(a.tensors[t].data[i]) +
                                 static_cast<double>(b.tensors[t].data[i])) /
                                2.0;
        CHECK(static_cast<double>(avg.tensors[t].data[i]) ==
              doctest::Approx(expected).epsilon(1e-7));
      }
    }
  }

  SUBCASE("k=10 random checkpoints equal an independent mean oracle") {
    std::vector<Checkpoint> ckpts;
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto m = Model<float>::init(tiny_cfg(PEVariant::Absolute), kTinyLayout, 100 + s);
      ckpts.push_back(to_checkpoint(m.params, s));
    }
    const Checkpoint avg = swa_average(ckpts);
    for (std::size_t t = 0; t < avg.tensors.size(); ++t) {
      for (std::size_t i = 0; i < avg.tensors[t].data.size(); ++i) {
        double sum = 0.0;  // independent accumulation
        for (const Checkpoint& c : ckpts) sum += c.tensors[t].data[i];
        // compare at storage precision: the format stores 32-bit floats
        const double oracle = static_cast<float>(sum / 10.0);
        CHECK(std::abs(static_cast<double>(avg.tensors[t].data[i]) - oracle) <=
              1e-12 * std::max(1.0, std::abs(oracle)));
      }
    }
  }

  SUBCASE("mismatched tensors are rejected") {
    auto other = Model<float>::init(tiny_cfg(PEVariant::LearnedRelative),
                                    kTinyLayout, 1);
    const Checkpoint b = to_checkpoint(other.params, 1);
    CHECK_THROWS_AS(swa_average({a, b}), DataError);
  }
}

TEST_CASE("train_loop: two runs with one seed produce bit-identical curves") {
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = 2;
  task.count = 16;
  task.seed = 3;

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.total_steps = 12;
  cfg.warmup_steps = 2;
  cfg.peak_lr = 1e-3;
  cfg.checkpoint_interval = 6;
  cfg.swa_count = 2;
  cfg.seed = 99;
  cfg.loss = LossKind::CeSoftmax;

  const auto run = [&]() {
    auto samples = make_samples<float>(task);
    auto model = Model<float>::init(tiny_cfg(PEVariant::Absolute), kTinyLayout, 1);
    std::vector<Sample<float>> test(samples.begin(), samples.begin() + 4);
    std::vector<Sample<float>> train(samples.begin() + 4, samples.end());
    return train_loop(model, train, test, cfg);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.logs.size() == b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    CHECK(a.logs[i].loss == b.logs[i].loss);
    CHECK(a.logs[i].lr == b.logs[i].lr);
    CHECK(a.logs[i].has_metric == b.logs[i].has_metric);
    if (a.logs[i].has_metric) CHECK(a.logs[i].metric == b.logs[i].metric);
  }
  CHECK(a.final_metric == b.final_metric);
  // SWA checkpoints agree bitwise
  for (std::size_t t = 0; t < a.swa.tensors.size(); ++t) {
    CHECK(a.swa.tensors[t].data == b.swa.tensors[t].data);
  }
}

TEST_CASE("smoke convergence: loss halves within 500 steps for every variant") {
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = 2;
  task.count = 64;
  task.seed = 21;
  task.noise = 0.03;

  for (const PEVariant pe :
       {PEVariant::None, PEVariant::Absolute, PEVariant::ALiBi2D,
        PEVariant::TimeALiBi, PEVariant::LearnedRelative, PEVariant::Conditional,
        PEVariant::ConditionalPlusAbsolute}) {
    auto samples = make_samples<float>(task);
    auto model = Model<float>::init(tiny_cfg(pe), kTinyLayout, 2);
    std::vector<Tensor<float>> handles;
    for (auto& [n, t] : model.params.named) handles.push_back(t);
    Adam<float> opt(handles);

    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.total_steps = 500;
    cfg.warmup_steps = 20;
    cfg.peak_lr = 2e-3;
    cfg.loss = LossKind::CeSoftmax;

    Rng order_rng(7);
    std::vector<const Sample<float>*> all;
    for (const auto& s : samples) all.push_back(&s);

    double first_loss = 0.0;
    bool halved = false;
    for (long step = 1; step <= 500 && !halved; ++step) {
      std::vector<const Sample<float>*> batch;
      for (int i = 0; i < cfg.batch_size; ++i) {
        batch.push_back(all[order_rng.uniform_below(all.size())]);
      }
      const double loss = train_step(model, opt, batch, step, cfg, nullptr);
      if (step == 1) first_loss = loss;
      if (step % 25 == 0 && loss <= 0.5 * first_loss) halved = true;
    }
    INFO("variant ", std::string(to_string(pe)));
    CHECK(halved);
  }
}

TEST_CASE("finetune: phase 1 freezes the backbone bit-exactly") {
  const int classes = 2;
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = classes;
  task.count = 20;
  task.seed = 31;
  auto samples = make_samples<float>(task);

  // 5 folds of 4, disjoint ids
  std::vector<std::vector<Sample<float>>> folds(5);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    folds[i % 5].push_back(samples[i]);
  }

  ModelConfig cfg = tiny_cfg(PEVariant::Absolute, classes);
  cfg.head = HeadActivation::Softmax;
  auto base_model = Model<float>::init(cfg, kTinyLayout, 77);
  const Checkpoint base = to_checkpoint(base_model.params, 1000);

  FinetuneConfig ft;
  ft.phase1_epochs = 3;
  ft.phase2_epochs = 0;  // stop after phase 1 to observe the freeze contract
  ft.batch_size = 4;
  ft.seed = 5;

  const FinetuneResult result = finetune<float>(base, cfg, kTinyLayout, folds, ft);
  REQUIRE(result.folds.size() == 5);
  for (const FoldResult& fold : result.folds) {
    bool head_changed = false;
    for (const CheckpointTensor& t : fold.model.tensors) {
      const CheckpointTensor& before = base.get(t.name);
      if (is_head_param(t.name)) {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
          head_changed = head_changed || t.data[i] != before.data[i];
        }
      } else {
        CHECK(t.data == before.data);  // bit-exact freeze
      }
    }
    CHECK(head_changed);
  }
}

TEST_CASE("finetune: phase 2 epoch learning rates follow 1e-4 * 0.85^(e-1)") {
  const FinetuneConfig ft;
  for (int e = 1; e <= 40; ++e) {
    const double lr = ft.phase2_lr * std::pow(ft.phase2_decay, e - 1);
    CHECK(lr == doctest::Approx(1e-4 * std::pow(0.85, e - 1)).epsilon(1e-15));
  }
  CHECK(ft.phase1_epochs == 10);
  CHECK(ft.phase1_lr == 1e-3);
  CHECK(ft.phase2_epochs == 40);
}

TEST_CASE("finetune: phase 2 updates the backbone") {
  const int classes = 2;
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = classes;
  task.count = 8;
  task.seed = 33;
  auto samples = make_samples<float>(task);
  std::vector<std::vector<Sample<float>>> folds(2);
  for (std::size_t i = 0; i < samples.size(); ++i) folds[i % 2].push_back(samples[i]);

  ModelConfig cfg = tiny_cfg(PEVariant::Absolute, classes);
  cfg.head = HeadActivation::Softmax;
  auto base_model = Model<float>::init(cfg, kTinyLayout, 78);
  const Checkpoint base = to_checkpoint(base_model.params, 0);

  FinetuneConfig ft;
  ft.phase1_epochs = 1;
  ft.phase2_epochs = 2;
  ft.batch_size = 4;

  const FinetuneResult result = finetune<float>(base, cfg, kTinyLayout, folds, ft);
  bool backbone_changed = false;
  for (const CheckpointTensor& t : result.folds[0].model.tensors) {
    if (is_head_param(t.name)) continue;
    if (t.data != base.get(t.name).data) backbone_changed = true;
  }
  CHECK(backbone_changed);
}

TEST_CASE("finetune: 5 folds evaluate disjointly and cover every clip once") {
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = 2;
  task.count = 10;
  task.seed = 41;
  auto samples = make_samples<float>(task);
  std::vector<std::vector<Sample<float>>> folds(5);
  for (std::size_t i = 0; i < samples.size(); ++i) folds[i % 5].push_back(samples[i]);

  ModelConfig cfg = tiny_cfg(PEVariant::None, 2);
  cfg.head = HeadActivation::Softmax;
  auto m = Model<float>::init(cfg, kTinyLayout, 1);
  const Checkpoint base = to_checkpoint(m.params, 0);
  FinetuneConfig ft;
  ft.phase1_epochs = 1;
  ft.phase2_epochs = 0;
  const FinetuneResult result = finetune<float>(base, cfg, kTinyLayout, folds, ft);
  REQUIRE(result.folds.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(result.folds[static_cast<std::size_t>(k)].fold == k);
  // every fold holds 2 of the 10 clips
  for (const auto& fold : folds) CHECK(fold.size() == 2);
}

TEST_CASE("finetune: duplicated clip across folds is a leakage error") {
  SynthTask task;
  task.layout = kTinyLayout;
  task.kind = TaskKind::FrequencyBand;
  task.classes = 2;
  task.count = 4;
  task.seed = 43;
  auto samples = make_samples<float>(task);
  std::vector<std::vector<Sample<float>>> folds(2);
  folds[0] = {samples[0], samples[1]};
  folds[1] = {samples[2], samples[0]};  // same id in both folds

  ModelConfig cfg = tiny_cfg(PEVariant::None, 2);
  cfg.head = HeadActivation::Softmax;
  auto m = Model<float>::init(cfg, kTinyLayout, 1);
  const Checkpoint base = to_checkpoint(m.params, 0);
  CHECK_THROWS_WITH_AS(
      (finetune<float>(base, cfg, kTinyLayout, folds, FinetuneConfig{})),
      doctest::Contains("multiple folds"), DataError);
}
