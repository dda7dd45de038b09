#include "sid/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "sid/image_io.hpp"

namespace sid::metrics {
namespace fs = std::filesystem;
using embed::EmbeddingVector;
using nlohmann::json;

namespace {

void require_non_empty_sets(std::size_t n, std::size_t m) {
  if (n == 0) throw InvalidArgument("no reference images (N = 0)");
  if (m == 0) throw InvalidArgument("no generated images (M = 0)");
}

void require_mask_count(const corpus::ReferenceSet& refs, std::span<const segment::SubjectMask> masks) {
  if (masks.size() != refs.size()) {
    throw InvalidArgument("mask count " + std::to_string(masks.size()) + " != reference count " +
                          std::to_string(refs.size()));
  }
}

std::vector<EmbeddingVector> embed_generated(const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                             const MetricOptions& options) {
  return embed::batch_embed(std::span<const Image8>(gen.images), encoder, options.batch_size);
}

std::vector<EmbeddingVector> embed_subject_segments(const corpus::ReferenceSet& refs,
                                                    std::span<const segment::SubjectMask> masks,
                                                    embed::Encoder& encoder, const MetricOptions& options) {
  std::vector<Image8> inputs;
  inputs.reserve(refs.size());
  for (std::size_t n = 0; n < refs.size(); ++n) {
    if (segment::is_empty(masks[n].mask)) throw InvalidArgument("empty mask for reference " + std::to_string(n));
    inputs.push_back(subject_segment(refs.images[n], masks[n], options.subject_resolution));
  }
  return embed::batch_embed(std::span<const Image8>(inputs), encoder, options.batch_size);
}

std::vector<std::optional<EmbeddingVector>> embed_non_subject_segments(const corpus::ReferenceSet& refs,
                                                                       std::span<const segment::SubjectMask> masks,
                                                                       embed::Encoder& encoder,
                                                                       const MetricOptions& options) {
  std::vector<Image8> inputs;
  std::vector<std::size_t> index;
  for (std::size_t n = 0; n < refs.size(); ++n) {
    if (segment::is_empty(segment::complement(masks[n].mask))) continue;
    inputs.push_back(non_subject_segment(refs.images[n], masks[n]));
    index.push_back(n);
  }
  const auto embedded = embed::batch_embed(std::span<const Image8>(inputs), encoder, options.batch_size);
  std::vector<std::optional<EmbeddingVector>> out(refs.size());
  for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] = embedded[k];
  return out;
}

}  // namespace

AlignmentResult subject_alignment(std::span<const EmbeddingVector> subject_segments,
                                  std::span<const EmbeddingVector> generated) {
  require_non_empty_sets(subject_segments.size(), generated.size());
  AlignmentResult out;
  out.pairwise = pairwise_cosine(embed::stack_rows(subject_segments), embed::stack_rows(generated));
  out.value = pairwise_average(out.pairwise);
  return out;
}

DisentanglementResult non_subject_disentanglement(std::span<const std::optional<EmbeddingVector>> non_subject,
                                                  std::span<const EmbeddingVector> generated) {
  require_non_empty_sets(non_subject.size(), generated.size());
  const Eigen::MatrixXd gen_rows = embed::stack_rows(generated);
  DisentanglementResult out;
  out.pairwise = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(non_subject.size()), gen_rows.rows(),
                                           std::numeric_limits<double>::quiet_NaN());
  Eigen::ArrayXXi included = Eigen::ArrayXXi::Zero(out.pairwise.rows(), out.pairwise.cols());
  for (std::size_t n = 0; n < non_subject.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    if (!non_subject[n]) {
      out.excluded_references.push_back(static_cast<int>(n));
      continue;
    }
    if (non_subject[n]->dim() != gen_rows.cols()) throw InvalidArgument("embedding dimensions differ");
    out.pairwise.row(row) = (gen_rows * non_subject[n]->values).transpose();
    included.row(row).setOnes();
  }
  if (out.excluded_references.size() == non_subject.size()) {
    throw InvalidArgument("nsd undefined: every reference has an empty non-subject segment");
  }
  out.value = 1.0 - pairwise_average(out.pairwise, included);
  return out;
}

TextAlignmentResult text_alignment(const EmbeddingVector& prompt, std::span<const EmbeddingVector> generated) {
  if (generated.empty()) throw InvalidArgument("no generated images (M = 0)");
  const Eigen::MatrixXd gen_rows = embed::stack_rows(generated);
  if (gen_rows.cols() != prompt.dim()) throw InvalidArgument("embedding dimensions differ");
  TextAlignmentResult out;
  out.per_image = gen_rows * prompt.values;
  out.value = pairwise_average(out.per_image);
  return out;
}

// ---------------------------------------------------------------------------

std::string strip_identifier(std::string_view prompt, std::string_view identifier_token) {
  corpus::check_generation_prompt(prompt, identifier_token);
  std::string text(prompt);
  text.erase(text.find(identifier_token), identifier_token.size());
  std::string out;
  out.reserve(text.size());
  for (char ch : text) {
    if (ch == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(ch);
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == '\t' || out.back() == '\n')) out.pop_back();
  const auto first = out.find_first_not_of(" \t\n");
  return first == std::string::npos ? std::string{} : out.substr(first);
}

Image8 subject_segment(const Image8& reference, const segment::SubjectMask& mask, int resolution) {
  return segment::center_align_resize(segment::apply_mask(reference, mask.mask), mask.mask, resolution);
}

Image8 non_subject_segment(const Image8& reference, const segment::SubjectMask& mask) {
  return segment::apply_mask(reference, segment::complement(mask.mask));
}

AlignmentResult subject_alignment(const corpus::ReferenceSet& refs, std::span<const segment::SubjectMask> masks,
                                  const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                  const MetricOptions& options) {
  require_non_empty_sets(refs.size(), gen.images.size());
  require_mask_count(refs, masks);
  const auto v = embed_subject_segments(refs, masks, encoder, options);
  const auto w = embed_generated(gen, encoder, options);
  return subject_alignment(v, w);
}

DisentanglementResult non_subject_disentanglement(const corpus::ReferenceSet& refs,
                                                  std::span<const segment::SubjectMask> masks,
                                                  const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                                  const MetricOptions& options) {
  require_non_empty_sets(refs.size(), gen.images.size());
  require_mask_count(refs, masks);
  const auto u = embed_non_subject_segments(refs, masks, encoder, options);
  const auto w = embed_generated(gen, encoder, options);
  return non_subject_disentanglement(u, w);
}

TextAlignmentResult text_alignment(std::string_view prompt, std::string_view identifier_token,
                                   const corpus::GeneratedSet& gen, embed::Encoder& encoder,
                                   const MetricOptions& options) {
  const std::string stripped = strip_identifier(prompt, identifier_token);
  const auto t = embed::embed_text(stripped, encoder);
  const auto w = embed_generated(gen, encoder, options);
  auto out = text_alignment(t, w);
  out.stripped_prompt = stripped;
  return out;
}

MetricReport evaluate(const corpus::ReferenceSet& refs, std::span<const segment::SubjectMask> masks,
                      const corpus::GeneratedSet& gen, embed::Encoder& encoder, const MetricOptions& options) {
  require_non_empty_sets(refs.size(), gen.images.size());
  require_mask_count(refs, masks);
  const std::string stripped = strip_identifier(gen.generation_prompt, refs.identifier_token);

  const auto w = embed_generated(gen, encoder, options);
  const auto sa = subject_alignment(embed_subject_segments(refs, masks, encoder, options), w);
  const auto nsd = non_subject_disentanglement(embed_non_subject_segments(refs, masks, encoder, options), w);
  const auto ta = text_alignment(embed::embed_text(stripped, encoder), w);

  MetricReport report;
  report.sa = sa.value;
  report.nsd = nsd.value;
  report.ta = ta.value;
  report.pairwise_sa = sa.pairwise;
  report.pairwise_nsd = nsd.pairwise;
  report.per_image_ta = ta.per_image;
  report.nsd_excluded = nsd.excluded_references;
  report.encoder_id = encoder.id();
  report.subject_id = refs.subject_id;
  report.run_id = gen.run_id;
  report.generation_prompt = gen.generation_prompt;
  report.stripped_prompt = stripped;
  return report;
}

// ---------------------------------------------------------------------------

std::string matrix_to_csv(const Eigen::MatrixXd& m) {
  std::string out;
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", m(r, c));
      if (c > 0) out.push_back(',');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

Eigen::MatrixXd matrix_from_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (!rows.empty() && row.size() != rows.front().size()) throw IoError("ragged CSV matrix");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

json report_to_json(const MetricReport& r) {
  return {{"sa", r.sa},
          {"nsd", r.nsd},
          {"ta", r.ta},
          {"per_image_ta", std::vector<double>(r.per_image_ta.data(), r.per_image_ta.data() + r.per_image_ta.size())},
          {"nsd_excluded", r.nsd_excluded},
          {"num_references", r.pairwise_sa.rows()},
          {"num_generated", r.pairwise_sa.cols()},
          {"encoder_id", r.encoder_id},
          {"subject_id", r.subject_id},
          {"run_id", r.run_id},
          {"generation_prompt", r.generation_prompt},
          {"stripped_prompt", r.stripped_prompt}};
}

void write_report(const fs::path& stem, const MetricReport& report) {
  json doc = report_to_json(report);
  doc["pairwise_sa_csv"] = fs::path(stem).concat(".sa.csv").filename().string();
  doc["pairwise_nsd_csv"] = fs::path(stem).concat(".nsd.csv").filename().string();
  write_text_file(fs::path(stem).concat(".json"), doc.dump(2) + "\n");
  write_text_file(fs::path(stem).concat(".sa.csv"), matrix_to_csv(report.pairwise_sa));
  write_text_file(fs::path(stem).concat(".nsd.csv"), matrix_to_csv(report.pairwise_nsd));
}

MetricReport read_report(const fs::path& stem) {
  const fs::path path = fs::path(stem).concat(".json");
  MetricReport r;
  try {
    const json doc = json::parse(read_text_file(path));
    r.sa = doc.at("sa").get<double>();
    r.nsd = doc.at("nsd").get<double>();
    r.ta = doc.at("ta").get<double>();
    const auto ta = doc.at("per_image_ta").get<std::vector<double>>();
    r.per_image_ta = Eigen::Map<const Eigen::VectorXd>(ta.data(), static_cast<Eigen::Index>(ta.size()));
    r.nsd_excluded = doc.at("nsd_excluded").get<std::vector<int>>();
    r.encoder_id = doc.at("encoder_id").get<std::string>();
    r.subject_id = doc.at("subject_id").get<std::string>();
    r.run_id = doc.at("run_id").get<std::string>();
    r.generation_prompt = doc.at("generation_prompt").get<std::string>();
    r.stripped_prompt = doc.at("stripped_prompt").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  r.pairwise_sa = matrix_from_csv(read_text_file(fs::path(stem).concat(".sa.csv")));
  r.pairwise_nsd = matrix_from_csv(read_text_file(fs::path(stem).concat(".nsd.csv")));
  return r;
}

}  // namespace sid::metrics
