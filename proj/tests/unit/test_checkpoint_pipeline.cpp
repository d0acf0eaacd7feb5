#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "scratch.hpp"
#include "sfde/checkpoint.hpp"
#include "sfde/pipeline.hpp"

using namespace sfde;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.model.backbone = {.stage_channels = {2, 4, 4, 8}, .blocks_per_stage = 1, .input_size = 128};
  c.model.embedding_dim = 16;
  c.model.heads = 2;
  c.train.steps = 3;
  c.train.pairs_per_batch = 3;
  c.train.seed = 21;
  return c;
}

struct Trained {
  testutil::ScratchDir dir;
  data::Manifest manifest;
  pipeline::TrainResult result;

  Trained() {
    data::generate_synthetic(dir.path() / "data", {.classes = 4, .image_size = 32});
    manifest = data::ingest(dir.path() / "data");
    result = pipeline::train(tiny_run(), manifest);
  }
};

Trained& shared() {
  static Trained t;
  return t;
}

}  // namespace

TEST(Training, LogsEveryStep) {
  const auto& r = shared().result;
  ASSERT_EQ(r.log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.log[i].step, i);
    EXPECT_TRUE(std::isfinite(r.log[i].total));
    EXPECT_NEAR(r.log[i].total, losses::total_loss(r.log[i].parts, {}), 1e-5 * std::max(1.0, r.log[i].total));
    EXPECT_FALSE(r.log[i].recall_at_1.has_value());
  }
  for (const auto& s : r.log) EXPECT_EQ(s.learning_rate, scheduled_rate(r.checkpoint.config.schedule(), s.step));
  EXPECT_EQ(r.checkpoint.steps, 3u);
  EXPECT_EQ(r.checkpoint.class_ids, (std::vector<std::uint32_t>{0, 1, 2, 3}));
  EXPECT_EQ(r.checkpoint.config.model.num_classes, 4u);
}

TEST(Training, SameSeedSameParameters) {
  auto& t = shared();
  const auto again = pipeline::train(tiny_run(), t.manifest);
  ASSERT_EQ(again.checkpoint.tensors.size(), t.result.checkpoint.tensors.size());
  for (std::size_t i = 0; i < again.log.size(); ++i) EXPECT_EQ(again.log[i].total, t.result.log[i].total);
  for (std::size_t i = 0; i < again.checkpoint.tensors.size(); ++i)
    EXPECT_EQ(again.checkpoint.tensors[i].values, t.result.checkpoint.tensors[i].values) << again.checkpoint.tensors[i].name;
}

TEST(Training, ObserverAndRecallSchedule) {
  auto& t = shared();
  auto config = tiny_run();
  config.train.eval_every = 2;
  std::vector<std::size_t> seen;
  const auto r = pipeline::train(config, t.manifest, "train", [&](const pipeline::StepRecord& s) { seen.push_back(s.step); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_FALSE(r.log[0].recall_at_1.has_value());
  EXPECT_TRUE(r.log[1].recall_at_1.has_value());
  EXPECT_TRUE(r.log[2].recall_at_1.has_value());
}

TEST(Training, ClassificationOnlyStillReportsContrastiveTerms) {
  auto& t = shared();
  auto config = tiny_run();
  config.loss.local_contrast = 0.0;
  config.loss.frequency_alignment = 0.0;
  config.train.steps = 30;
  config.train.pairs_per_batch = 4;
  const auto r = pipeline::train(config, t.manifest);
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    early += r.log[i].parts.classification;
    late += r.log[r.log.size() - 1 - i].parts.classification;
  }
  EXPECT_LT(late, early);
  for (const auto& s : r.log) {
    EXPECT_GT(s.parts.local_contrast, 0.0);
    EXPECT_GT(s.parts.frequency_alignment, 0.0);
    EXPECT_NEAR(s.total, 0.1 * s.parts.classification, 1e-6);
  }
}

TEST(Training, RejectsUnusableSplits) {
  auto& t = shared();
  EXPECT_THROW(pipeline::train(tiny_run(), t.manifest, "test"), ValidationError);
  data::Manifest one;
  for (const auto& e : t.manifest.entries)
    if (e.class_id == 0) one.entries.push_back(e);
  EXPECT_THROW(pipeline::train(tiny_run(), one), ValidationError);
}

TEST(StepLog, CsvLayout) {
  auto& t = shared();
  pipeline::write_step_log(t.result.log, t.dir / "steps.csv");
  std::ifstream in(t.dir / "steps.csv");
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "step,learning_rate,total,classification,local_contrast,frequency_alignment,recall_at_1");
  std::size_t rows = 0;
  while (std::getline(in, row)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST(Checkpoint, RoundTripRestoresIdenticalEmbeddings) {
  auto& t = shared();
  save_checkpoint(t.result.checkpoint, t.dir / "model.ckpt");
  const auto loaded = load_checkpoint(t.dir / "model.ckpt");
  EXPECT_EQ(serialize_config(loaded.config), serialize_config(t.result.checkpoint.config));
  EXPECT_EQ(loaded.class_ids, t.result.checkpoint.class_ids);
  EXPECT_EQ(loaded.optimizer, t.result.checkpoint.optimizer);
  EXPECT_EQ(loaded.normalization.mean, t.result.checkpoint.normalization.mean);
  const auto model = instantiate(loaded);
  const auto bank = data::load_images(t.manifest.select("train", std::nullopt), 128);
  const auto original = pipeline::embed(*t.result.model, bank, loaded.normalization);
  const auto restored = pipeline::embed(*model, bank, loaded.normalization, 5);
  ASSERT_EQ(original.size(), bank.entries.size());
  EXPECT_EQ(original, restored);
}

TEST(Checkpoint, CorruptFilesRaiseFormatErrors) {
  auto& t = shared();
  save_checkpoint(t.result.checkpoint, t.dir / "good.ckpt");
  const std::string good = retrieval::read_file(t.dir / "good.ckpt");
  auto code_of = [&](const std::string& bytes) {
    retrieval::write_file_atomic(t.dir / "bad.ckpt", bytes);
    try {
      load_checkpoint(t.dir / "bad.ckpt");
    } catch (const FormatError& e) {
      return e.code();
    }
    ADD_FAILURE() << "accepted a corrupt checkpoint";
    return FormatErrorCode::InvalidField;
  };
  std::string magic = good;
  magic[1] = 'X';
  EXPECT_EQ(code_of(magic), FormatErrorCode::MagicMismatch);
  std::string version = good;
  version[4] = 2;
  EXPECT_EQ(code_of(version), FormatErrorCode::VersionMismatch);
  EXPECT_EQ(code_of(good.substr(0, good.size() / 2)), FormatErrorCode::Truncated);
  EXPECT_EQ(code_of(good + "!"), FormatErrorCode::InvalidField);
}

TEST(Checkpoint, MismatchedConfigurationListsEveryTensor) {
  auto& t = shared();
  auto config = t.result.checkpoint.config.model;
  config.embedding_dim = 24;
  SfdeModel<float> other(config, 1);
  try {
    restore_parameters(other, t.result.checkpoint.tensors);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("dimension mismatch"), std::string::npos);
    EXPECT_NE(what.find("global.reduce.weight"), std::string::npos) << what;
    EXPECT_NE(what.find("global.classifier.weight"), std::string::npos) << what;
  }
  config = t.result.checkpoint.config.model;
  config.branches.frequency = false;
  SfdeModel<float> fewer(config, 1);
  try {
    restore_parameters(fewer, t.result.checkpoint.tensors);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("present in checkpoint but not in model"), std::string::npos);
  }
}

TEST(Embed, SameImageTwiceGivesIdenticalVectors) {
  auto& t = shared();
  auto entries = t.manifest.select("train", retrieval::View::Drone);
  entries.resize(1);
  auto twice = entries;
  twice.push_back(entries[0]);
  const auto bank = data::load_images(twice, 128);
  const auto records = pipeline::embed(*t.result.model, bank, t.result.checkpoint.normalization);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].vector, records[1].vector);
  EXPECT_EQ(records[0].vector.size(), t.result.checkpoint.config.model.descriptor_dim());
}

TEST(Embed, DisablingFrequencyShrinksStoreDimension) {
  auto& t = shared();
  auto config = t.result.checkpoint.config.model;
  config.branches.frequency = false;
  SfdeModel<float> model(config, 2);
  auto entries = t.manifest.select("train", retrieval::View::Satellite);
  const auto bank = data::load_images(entries, 128);
  retrieval::save_embeddings(pipeline::embed(model, bank, t.result.checkpoint.normalization), t.dir / "nofreq.emb");
  const std::string bytes = retrieval::read_file(t.dir / "nofreq.emb");
  std::uint32_t count = 0, dim = 0;
  std::memcpy(&count, bytes.data() + 8, 4);
  std::memcpy(&dim, bytes.data() + 12, 4);
  EXPECT_EQ(count, entries.size());
  EXPECT_EQ(dim, t.result.checkpoint.config.model.descriptor_dim() - config.channels());
}

TEST(EvaluateStores, WritesBothDirections) {
  auto& t = shared();
  const auto bank = data::load_images(t.manifest.select("train", std::nullopt), 128);
  const auto records = pipeline::embed(*t.result.model, bank, t.result.checkpoint.normalization);
  std::vector<retrieval::EmbeddingRecord> drones, satellites;
  for (const auto& r : records) (r.view == retrieval::View::Drone ? drones : satellites).push_back(r);
  const auto reports = pipeline::evaluate_stores(drones, satellites, {.ks = {1, 2}}, t.dir / "eval");
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].direction, "drone_to_satellite");
  EXPECT_EQ(reports[1].direction, "satellite_to_drone");
  for (const char* f : {"ranking_drone_to_satellite.csv", "summary_drone_to_satellite.csv",
                        "ranking_satellite_to_drone.csv", "summary_satellite_to_drone.csv", "histogram.csv"})
    EXPECT_TRUE(std::filesystem::exists(t.dir / "eval" / f)) << f;

  const auto self = pipeline::evaluate_stores(drones, drones, {.ks = {1}}, t.dir / "self");
  EXPECT_EQ(self[0].direction, "query_to_gallery");
  EXPECT_EQ(self[0].recall_at.at(1), 1.0);
  auto short_vectors = satellites;
  for (auto& r : short_vectors) r.vector = {1.f};
  EXPECT_THROW(pipeline::evaluate_stores(drones, short_vectors, {}, t.dir / "bad"), ValidationError);
  EXPECT_THROW(pipeline::evaluate_stores({}, satellites, {}, t.dir / "bad"), ValidationError);
}
