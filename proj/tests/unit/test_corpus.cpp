#include <gtest/gtest.h>

#include "sid/corpus.hpp"
#include "sid/image_io.hpp"
#include "support.hpp"

using namespace sid;
using namespace sid::corpus;
namespace fs = std::filesystem;

namespace {

RunManifest one_subject(std::vector<std::string> prompts, int per_prompt = 2) {
  RunManifest m;
  m.subjects.push_back({"dog1", "dog", "[v]", "imgs", std::move(prompts)});
  m.images_per_prompt = per_prompt;
  return m;
}

}  // namespace

TEST(Manifest, EvaluationManifestTotals7500) {
  const auto m = load_manifest(fs::path(SID_TEST_FIXTURES) / "evaluation_manifest.json");
  EXPECT_EQ(m.subjects.size(), 15u);
  for (const auto& s : m.subjects) EXPECT_EQ(s.prompts.size(), 25u) << s.id;
  EXPECT_EQ(m.images_per_prompt, 20);
  EXPECT_EQ(m.total_images(), 7500);
  const auto report = validate_manifest(m);
  EXPECT_TRUE(report.ok()) << (report.violations.empty() ? "" : report.violations.front());
}

TEST(Manifest, DeclaredTotalMismatchIsReported) {
  auto m = one_subject({"a [v] dog"}, 3);
  m.declared_total = 4;
  const auto report = validate_manifest(m);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0], "total mismatch: declared 4, computed 3");
}

TEST(Manifest, PromptWithoutIdentifierIsReported) {
  const auto report = validate_manifest(one_subject({"a dog on a beach"}));
  EXPECT_FALSE(report.ok());
}

TEST(Manifest, PromptWithTwoIdentifiersIsReported) {
  EXPECT_FALSE(validate_manifest(one_subject({"a [v] dog and a [v] dog"})).ok());
}

TEST(Manifest, DuplicateSubjectIsReported) {
  auto m = one_subject({"a [v] dog"});
  m.subjects.push_back(m.subjects.front());
  const auto report = validate_manifest(m);
  ASSERT_FALSE(report.ok());
  EXPECT_EQ(report.violations[0], "duplicate subject_id: dog1");
}

TEST(Manifest, IdentifierEqualToClassWordIsReported) {
  auto m = one_subject({"a dog dog"});
  m.subjects[0].identifier_token = "dog";
  EXPECT_FALSE(validate_manifest(m).ok());
}

TEST(Manifest, JsonRoundTripAndRelativePaths) {
  testkit::TempDir dir;
  auto m = one_subject({"a [v] dog in the snow", "a [v] dog on the beach"});
  m.declared_total = 4;
  write_text_file(dir / "m.json", manifest_to_json(m).dump());
  const auto back = load_manifest(dir / "m.json");
  EXPECT_EQ(back.subjects[0].image_dir, dir / "imgs");
  EXPECT_EQ(back.subjects[0].prompts, m.subjects[0].prompts);
  EXPECT_EQ(back.declared_total, 4);
  EXPECT_TRUE(validate_manifest(back).ok());
}

TEST(Manifest, MalformedJsonIsRejected) {
  testkit::TempDir dir;
  write_text_file(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_manifest(dir / "bad.json"), InvalidArgument);
}

TEST(ReferenceSet, LoadsInLexicographicOrder) {
  testkit::TempDir dir;
  const Image8 a(4, 4, 3, 10);
  const Image8 b(4, 4, 3, 20);
  write_png(dir / "b.png", b);
  write_png(dir / "a.png", a);
  write_text_file(dir / "notes.txt", "ignored");
  const SubjectEntry meta{"s", "dog", "[v]", dir.path(), {"a [v] dog"}};
  const auto refs = load_reference_set(dir.path(), meta);
  ASSERT_EQ(refs.size(), 2u);
  EXPECT_EQ(refs.filenames[0], "a.png");
  EXPECT_EQ(refs.images[0], a);
  EXPECT_EQ(refs.images[1], b);
}

TEST(ReferenceSet, EmptyOrMissingDirectoryFails) {
  testkit::TempDir dir;
  const SubjectEntry meta{"s", "dog", "[v]", dir.path(), {"a [v] dog"}};
  EXPECT_THROW(load_reference_set(dir.path(), meta), InvalidArgument);
  EXPECT_THROW(load_reference_set(dir / "nope", meta), IoError);
}

TEST(ReferenceSet, HashIsOrderSensitive) {
  ReferenceSet r;
  r.subject_id = "s";
  r.class_name = "dog";
  r.images = {Image8(2, 2, 3, 1), Image8(2, 2, 3, 2)};
  r.filenames = {"a", "b"};
  ReferenceSet swapped = r;
  std::swap(swapped.images[0], swapped.images[1]);
  EXPECT_NE(r.hash(), swapped.hash());
}

TEST(GeneratedSet, SaveLoadRoundTrip) {
  testkit::TempDir dir;
  GeneratedSet set{{Image8(5, 6, 3, 9), Image8(5, 6, 3, 200)}, "a [v] dog on a beach", "run1", {4, 5}};
  save_generated_set(set, dir / "g");
  const auto back = load_generated_set(dir / "g");
  EXPECT_EQ(back.images, set.images);
  EXPECT_EQ(back.seeds, set.seeds);
  EXPECT_EQ(back.generation_prompt, set.generation_prompt);
  EXPECT_EQ(back.run_id, set.run_id);
}

TEST(GenerationPrompt, IdentifierMustOccurOnce) {
  EXPECT_NO_THROW(check_generation_prompt("a [v] dog swimming", "[v]"));
  EXPECT_THROW(check_generation_prompt("a dog swimming", "[v]"), InvalidArgument);
  EXPECT_THROW(check_generation_prompt("a [v] dog and a [v] cat", "[v]"), InvalidArgument);
}
