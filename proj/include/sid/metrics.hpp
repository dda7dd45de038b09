#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "sid/corpus.hpp"
#include "sid/embed.hpp"
#include "sid/error.hpp"
#include "sid/segment.hpp"

namespace sid::metrics {

/// Arithmetic mean over the cells where `included` is nonzero.
template <typename Derived, typename MaskDerived>
double pairwise_average(const Eigen::DenseBase<Derived>& values, const Eigen::DenseBase<MaskDerived>& included) {
  if (values.rows() != included.rows() || values.cols() != included.cols()) {
    throw InvalidArgument("pairwise_average: exclusion mask shape mismatch");
  }
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (included(r, c) == 0) continue;
      sum += static_cast<double>(values(r, c));
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("pairwise_average: no included cells");
  return sum / static_cast<double>(count);
}

template <typename Derived>
double pairwise_average(const Eigen::DenseBase<Derived>& values) {
  return pairwise_average(values, Eigen::ArrayXX<int>::Ones(values.rows(), values.cols()));
}

/// Pairwise dot products of two row-stacked sets of unit vectors.
template <typename DerivedA, typename DerivedB>
Eigen::MatrixXd pairwise_cosine(const Eigen::MatrixBase<DerivedA>& rows_a, const Eigen::MatrixBase<DerivedB>& rows_b) {
  if (rows_a.cols() != rows_b.cols()) throw InvalidArgument("pairwise_cosine: dimension mismatch");
  return (rows_a.template cast<double>() * rows_b.template cast<double>().transpose()).eval();
}

struct AlignmentResult {
  double value = 0.0;
  Eigen::MatrixXd pairwise;  // rows: references, cols: generated images
};

struct DisentanglementResult {
  double value = 0.0;
  Eigen::MatrixXd pairwise;            // NaN rows for excluded references
  std::vector<int> excluded_references;
};

struct TextAlignmentResult {
  double value = 0.0;
  Eigen::VectorXd per_image;
  std::string stripped_prompt;
};

// Embedding-level forms -------------------------------------------------

AlignmentResult subject_alignment(std::span<const embed::EmbeddingVector> subject_segments,
                                  std::span<const embed::EmbeddingVector> generated);

/// A missing entry marks a reference whose non-subject segment is empty.
DisentanglementResult non_subject_disentanglement(
    std::span<const std::optional<embed::EmbeddingVector>> non_subject_segments,
    std::span<const embed::EmbeddingVector> generated);

TextAlignmentResult text_alignment(const embed::EmbeddingVector& prompt,
                                   std::span<const embed::EmbeddingVector> generated);

// Image-level forms -----------------------------------------------------

struct MetricOptions {
  /// Side length of the centred subject segment before encoding.
  int subject_resolution = 224;
  int batch_size = 16;
};

/// Removes the identifier, collapses doubled spaces, trims the ends.
std::string strip_identifier(std::string_view prompt, std::string_view identifier_token);

/// Encoder input for reference n on the subject path.
Image8 subject_segment(const Image8& reference, const segment::SubjectMask& mask, int resolution);
/// Encoder input for reference n on the non-subject path (full frame, no crop).
Image8 non_subject_segment(const Image8& reference, const segment::SubjectMask& mask);

AlignmentResult subject_alignment(const corpus::ReferenceSet& refs, std::span<const segment::SubjectMask> masks,
                                  const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                  const MetricOptions& options = {});

DisentanglementResult non_subject_disentanglement(const corpus::ReferenceSet& refs,
                                                  std::span<const segment::SubjectMask> masks,
                                                  const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                                  const MetricOptions& options = {});

TextAlignmentResult text_alignment(std::string_view prompt, std::string_view identifier_token,
                                   const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                   const MetricOptions& options = {});

struct MetricReport {
  double sa = 0.0;
  double nsd = 0.0;
  double ta = 0.0;
  Eigen::MatrixXd pairwise_sa;
  Eigen::MatrixXd pairwise_nsd;
  Eigen::VectorXd per_image_ta;
  std::vector<int> nsd_excluded;
  std::string encoder_id;
  std::string subject_id;
  std::string run_id;
  std::string generation_prompt;
  std::string stripped_prompt;
};

/// All three measures; generated images are encoded once.
MetricReport evaluate(const corpus::ReferenceSet& refs, std::span<const segment::SubjectMask> masks,
                      const corpus::GeneratedSet& gen, embed::Encoder& encoder, const MetricOptions& options = {});

/// Rows = reference index, columns = generated index, 9 significant digits.
std::string matrix_to_csv(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_csv(std::string_view text);

nlohmann::json report_to_json(const MetricReport& report);
/// Writes `<stem>.json`, `<stem>.sa.csv` and `<stem>.nsd.csv`.
void write_report(const std::filesystem::path& stem, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& stem);

}  // namespace sid::metrics
