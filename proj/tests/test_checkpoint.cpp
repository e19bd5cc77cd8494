#include <filesystem>

#include <gtest/gtest.h>

#include "ckf/checkpoint.hpp"
#include "ckf/synth.hpp"

namespace ckf {
namespace {

struct Fixture {
  ModelConfig cfg;
  EventStream stream;
};

Fixture make_fixture() {
  Fixture f;
  f.cfg.latent_dim = 3;
  f.cfg.partition = build_partition(5, 1.0);
  f.cfg.row_scope = DriftScope::per_entity;
  f.cfg.c_row = 0.05;  // columns keep the shared c = 0 process
  f.cfg.seed = 11;
  SynthSpec s;
  s.n_rows = 8;
  s.n_cols = 5;
  s.latent_dim = 3;
  s.row_schedule = {{0.0, 0.02}};
  s.col_schedule = {{0.0, 0.02}};
  s.partition = f.cfg.partition;
  s.n_events = 600;
  s.seed = 5;
  std::vector<EventRecord> recs;
  for (const auto& e : generate(s).events)
    recs.push_back({"r" + std::to_string(e.row), "c" + std::to_string(e.col), e.t, e.value});
  f.stream = ingest(recs, f.cfg);
  return f;
}

void expect_same_state(const Session& a, const Session& b) {
  EXPECT_EQ(a.events_done, b.events_done);
  EXPECT_EQ(a.metrics, b.metrics);
  ASSERT_EQ(a.engine.store().size(), b.engine.store().size());
  for (const auto& [id, rec] : a.engine.store().records()) {
    const auto& other = b.engine.store().at(id);
    EXPECT_EQ(rec.belief.mean, other.belief.mean);
    EXPECT_EQ(rec.belief.covariance, other.belief.covariance);
    EXPECT_EQ(rec.event_count, other.event_count);
  }
  ASSERT_EQ(a.engine.drifts().size(), b.engine.drifts().size());
  for (const auto& [k, p] : a.engine.drifts()) {
    const auto& q = b.engine.drifts().at(k);
    EXPECT_EQ(p.a, q.a);
    EXPECT_EQ(p.history, q.history);
    EXPECT_EQ(p.update_count, q.update_count);
  }
}

TEST(Checkpoint, RoundTripPreservesState) {
  auto f = make_fixture();
  Session s(f.cfg);
  RunOptions o;
  o.warmup = 10;
  o.stop_after = 300;
  run_online(s, f.stream, o);
  const Session back = deserialize_session(serialize_session(s), f.cfg);
  expect_same_state(s, back);
  EXPECT_EQ(back.keys, s.keys);
}

TEST(Checkpoint, SplitRunEqualsUnsplitRun) {
  auto f = make_fixture();
  RunOptions o;
  o.warmup = 10;
  Session whole(f.cfg);
  const auto full = run_online(whole, f.stream, o);

  const auto path = std::filesystem::temp_directory_path() / "ckf_split_test.ckpt";
  {
    Session first(f.cfg);
    RunOptions part = o;
    part.stop_after = 257;
    run_online(first, f.stream, part);
    checkpoint_save(first, path.string());
  }
  Session resumed = checkpoint_load(path.string(), f.cfg);
  const auto split = run_online(resumed, f.stream, o);
  std::filesystem::remove(path);
  EXPECT_EQ(split.rmse, full.rmse);
  expect_same_state(whole, resumed);
}

TEST(Checkpoint, RejectsDifferentConfig) {
  auto f = make_fixture();
  Session s(f.cfg);
  const auto bytes = serialize_session(s);
  ModelConfig other = f.cfg;
  other.c_row = 0.06;
  EXPECT_THROW(deserialize_session(bytes, other), CheckpointError);
  EXPECT_EQ(read_checkpoint_header(bytes).config_text, f.cfg.canonical());
  EXPECT_EQ(ModelConfig::from_canonical(f.cfg.canonical()).canonical(), f.cfg.canonical());
}

TEST(Checkpoint, RejectsUnknownVersionCorruptionAndTruncation) {
  auto f = make_fixture();
  Session s(f.cfg);
  RunOptions o;
  o.stop_after = 50;
  run_online(s, f.stream, o);
  const auto bytes = serialize_session(s);

  auto versioned = bytes;
  versioned[sizeof kCheckpointMagic] = 7;
  EXPECT_THROW(deserialize_session(versioned, f.cfg), CheckpointError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_session(flipped, f.cfg), CheckpointError);

  const std::vector<char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() - 9));
  EXPECT_THROW(deserialize_session(cut, f.cfg), CheckpointError);
  EXPECT_THROW(deserialize_session(std::vector<char>(5, 'x'), f.cfg), CheckpointError);
  EXPECT_THROW(checkpoint_load("/nonexistent/dir/ckpt", f.cfg), CheckpointError);
}

TEST(Checkpoint, ResumeAgainstOtherStreamFails) {
  auto f = make_fixture();
  Session s(f.cfg);
  RunOptions o;
  o.stop_after = 20;
  run_online(s, f.stream, o);
  std::vector<EventRecord> other{{"zz", "yy", 1e9, 3.0}};
  EXPECT_THROW(run_online(s, ingest(other, f.cfg), o), CheckpointError);
}

}  // namespace
}  // namespace ckf
