#include <gtest/gtest.h>

#include "streameval/streameval.hpp"

namespace se = streameval;

namespace {

std::string annotation_doc(const std::string& entries, const std::string& type = "Present") {
  return R"({"tracks":[{"task_id":"t","video_id":"v","task_type":")" + type +
         R"(","category":"c","prompt":"q","entries":[)" + entries + "]}]}";
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const se::Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Annotations, WellFormedTrack) {
  const auto tracks = se::validate_annotation_file(
      annotation_doc(R"({"t":0,"caption":"a"},{"t":1,"caption":"b"},{"t":2,"caption":"c"})"));
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].length(), 3u);
  EXPECT_EQ(tracks[0].caption_at(1), "b");
}

TEST(Annotations, GapIsRejected) {
  const auto doc = annotation_doc(R"({"t":0,"caption":"a"},{"t":2,"caption":"c"})");
  EXPECT_THROW(se::validate_annotation_file(doc), se::SchemaError);
  EXPECT_NE(error_of([&] { se::validate_annotation_file(doc); }).find("gap at timestep 1"), std::string::npos);
}

TEST(Annotations, UnknownTaskType) {
  const auto doc = annotation_doc(R"({"t":0,"caption":"a"})", "Recall");
  EXPECT_NE(error_of([&] { se::validate_annotation_file(doc); }).find("unknown task_type"), std::string::npos);
}

TEST(Annotations, MalformedJsonAndMissingTracks) {
  EXPECT_THROW(se::validate_annotation_file("{not json"), se::ParseError);
  EXPECT_THROW(se::validate_annotation_file(R"({"foo":1})"), se::SchemaError);
  EXPECT_THROW(se::validate_annotation_file(annotation_doc("")), se::SchemaError);
}

TEST(Annotations, RoundTrip) {
  const auto tracks = se::smoke_tracks();
  const auto text = se::serialize_annotations(tracks);
  const auto back = se::validate_annotation_file(text);
  EXPECT_EQ(se::serialize_annotations(back), text);
}

TEST(ResponseLog, Ordering) {
  se::ResponseLog log{"t", se::Protocol::Async, {{1.0, 0, "a", false, 1.0}, {2.5, 1, "b", false, 1.5}}, {}};
  EXPECT_NO_THROW(se::validate_log(log));
  EXPECT_EQ(log.responses.size(), 2u);

  se::ResponseLog bad{"t", se::Protocol::Async, {{2.0, 0, "a", false, 0.0}, {1.0, 1, "b", false, 0.0}}, {}};
  EXPECT_NE(error_of([&] { se::validate_log(bad); }).find("emit_time not increasing"), std::string::npos);
}

TEST(ResponseLog, PauseMustBeEmpty) {
  se::ResponseLog log{"t", se::Protocol::Sync, {{0.0, 0, "text", true, 0.0}}, {}};
  EXPECT_THROW(se::validate_log(log), se::SchemaError);
}

TEST(ResponseLog, RoundTripIsByteStable) {
  se::ResponseLog log{"t", se::Protocol::Async, {{0.5, 0, "a", false, 0.5}, {1.25, 1, "", true, 0.75}},
                      {{"backend", "echo"}}};
  const auto text = se::serialize_response_log(log);
  const auto back = se::load_response_log(text);
  EXPECT_EQ(back, log);
  EXPECT_EQ(se::serialize_response_log(back), text);
}

TEST(Clock, VirtualNeverGoesBackwards) {
  se::VirtualClock c(1.0);
  c.advance_to(2.0);
  c.advance_by(0.5);
  EXPECT_DOUBLE_EQ(c.now(), 2.5);
  EXPECT_THROW(c.advance_to(1.0), se::ClockError);
}

TEST(Clock, WallIsMonotonic) {
  se::WallClock c;
  const double a = c.now();
  c.sleep_until(a + 0.02);
  EXPECT_GE(c.now(), a + 0.02);
}
