#include "ccq/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace ccq {

std::size_t packed_code_bytes(int num_books, int words_per_book) {
  if (num_books < 1 || words_per_book < 2 ||
      !is_power_of_two(static_cast<std::uint64_t>(words_per_book))) {
    throw std::invalid_argument("invalid code geometry");
  }
  const int bits = num_books * std::countr_zero(static_cast<std::uint32_t>(words_per_book));
  return static_cast<std::size_t>((bits + 7) / 8) + 1;
}

std::size_t PackedCodes::bytes_per_point() const {
  return packed_code_bytes(static_cast<int>(num_books), static_cast<int>(words_per_book));
}

std::span<const std::uint8_t> PackedCodes::point(std::size_t i) const {
  const std::size_t stride = bytes_per_point();
  if (i >= count || (i + 1) * stride > buffer.size()) {
    throw std::out_of_range("packed code index out of range");
  }
  return std::span<const std::uint8_t>(buffer.data() + i * stride, stride);
}

Vector map_to_latent(const Vector& x, const CcqModel& model, int modality) {
  if (modality < 0 ||
      modality >= static_cast<int>(model.mappings.per_modality.size())) {
    throw std::invalid_argument("modality index out of range");
  }
  const Matrix& rot = model.mappings.per_modality[static_cast<std::size_t>(modality)];
  if (x.size() != rot.rows()) {
    throw std::invalid_argument("feature dimension does not match the mapping");
  }
  return rot.transpose() * x;
}

std::uint8_t nearest_norm_bin(double sq_norm, std::span<const double> centers) {
  if (centers.empty() || centers.size() > 256) {
    throw std::invalid_argument("norm bin centers must number 1..256");
  }
  const auto it = std::lower_bound(centers.begin(), centers.end(), sq_norm);
  if (it == centers.begin()) return 0;
  if (it == centers.end()) return static_cast<std::uint8_t>(centers.size() - 1);
  const auto prev = it - 1;
  const std::size_t idx = (sq_norm - *prev <= *it - sq_norm)
                              ? static_cast<std::size_t>(prev - centers.begin())
                              : static_cast<std::size_t>(it - centers.begin());
  return static_cast<std::uint8_t>(idx);
}

namespace {

CodeVec quantize_target(const EncodeTarget& problem, const CcqModel& model) {
  CodeVec code = encode_greedy(problem, model.codebook);
  if (model.config.encode_mode == EncodeMode::Icm) {
    code = encode_icm(problem, model.codebook, code, model.config.icm_sweeps);
  }
  return code;
}

PointCode finish_code(CodeVec code, const CcqModel& model) {
  PointCode out;
  const double sq_norm = model.codebook.decode(code).squaredNorm();
  out.norm_byte = nearest_norm_bin(sq_norm, model.norm_bin_centers);
  out.indices = std::move(code);
  return out;
}

PackedCodes make_container(std::uint8_t tag, std::size_t count, const CcqModel& model) {
  PackedCodes packed;
  packed.modality_tag = tag;
  packed.num_books = static_cast<std::uint32_t>(model.codebook.num_books);
  packed.words_per_book = static_cast<std::uint32_t>(model.codebook.words_per_book);
  packed.fingerprint = model_fingerprint(model);
  packed.count = count;
  packed.buffer.assign(count * packed.bytes_per_point(), 0);
  return packed;
}

}  // namespace

PointCode encode_point(const Vector& x, const CcqModel& model, int modality) {
  const Vector latent = map_to_latent(x, model, modality);
  const double weight =
      model.config.modality_weights.empty()
          ? 1.0
          : model.config.modality_weights[static_cast<std::size_t>(modality)];
  return finish_code(quantize_target(EncodeTarget::single(latent, weight), model),
                     model);
}

void pack_code(std::span<const std::uint32_t> indices, std::uint8_t norm_byte,
               int words_per_book, std::span<std::uint8_t> out) {
  const int num_books = static_cast<int>(indices.size());
  const std::size_t need = packed_code_bytes(num_books, words_per_book);
  if (out.size() != need) throw std::invalid_argument("output span has wrong size");
  const int bits_per_subcode = std::countr_zero(static_cast<std::uint32_t>(words_per_book));
  std::fill(out.begin(), out.end(), 0);
  for (int m = 0; m < num_books; ++m) {
    const std::uint32_t idx = indices[static_cast<std::size_t>(m)];
    if (idx >= static_cast<std::uint32_t>(words_per_book)) {
      throw std::out_of_range("codeword index exceeds words_per_book");
    }
    for (int b = 0; b < bits_per_subcode; ++b) {
      if ((idx >> b) & 1u) {
        const int bit = m * bits_per_subcode + b;
        out[static_cast<std::size_t>(bit >> 3)] |=
            static_cast<std::uint8_t>(1u << (bit & 7));
      }
    }
  }
  out[need - 1] = norm_byte;
}

PointCode unpack_code(std::span<const std::uint8_t> bytes, int num_books,
                      int words_per_book) {
  const std::size_t need = packed_code_bytes(num_books, words_per_book);
  if (bytes.size() != need) throw std::invalid_argument("packed code has wrong size");
  const int bits_per_subcode = std::countr_zero(static_cast<std::uint32_t>(words_per_book));
  PointCode out;
  out.indices.assign(static_cast<std::size_t>(num_books), 0);
  for (int m = 0; m < num_books; ++m) {
    std::uint32_t idx = 0;
    for (int b = 0; b < bits_per_subcode; ++b) {
      const int bit = m * bits_per_subcode + b;
      if ((bytes[static_cast<std::size_t>(bit >> 3)] >> (bit & 7)) & 1u) {
        idx |= 1u << b;
      }
    }
    out.indices[static_cast<std::size_t>(m)] = idx;
  }
  out.norm_byte = bytes[need - 1];
  return out;
}

PackedCodes encode_database(const Matrix& features, const CcqModel& model,
                            int modality) {
  PackedCodes packed = make_container(static_cast<std::uint8_t>(modality),
                                      static_cast<std::size_t>(features.cols()), model);
  const std::size_t stride = packed.bytes_per_point();
  for (Eigen::Index n = 0; n < features.cols(); ++n) {
    const PointCode code = encode_point(features.col(n), model, modality);
    pack_code(code.indices, code.norm_byte, model.codebook.words_per_book,
              std::span<std::uint8_t>(packed.buffer.data() +
                                          static_cast<std::size_t>(n) * stride,
                                      stride));
  }
  return packed;
}

PackedCodes encode_joint_database(const std::vector<Matrix>& features,
                                  const CcqModel& model) {
  const int num_modalities = static_cast<int>(features.size());
  if (num_modalities != static_cast<int>(model.mappings.per_modality.size())) {
    throw std::invalid_argument("joint encoding needs every modality's features");
  }
  const Eigen::Index count = features.empty() ? 0 : features[0].cols();
  for (const auto& x : features) {
    if (x.cols() != count) {
      throw std::invalid_argument("joint encoding needs equal column counts");
    }
  }
  PackedCodes packed =
      make_container(kJointModalityTag, static_cast<std::size_t>(count), model);
  const std::size_t stride = packed.bytes_per_point();
  std::vector<Vector> latents(static_cast<std::size_t>(num_modalities));
  for (Eigen::Index n = 0; n < count; ++n) {
    for (int v = 0; v < num_modalities; ++v) {
      latents[static_cast<std::size_t>(v)] =
          map_to_latent(features[static_cast<std::size_t>(v)].col(n), model, v);
    }
    const EncodeTarget problem =
        EncodeTarget::joint(latents, model.config.modality_weights);
    const PointCode code = finish_code(quantize_target(problem, model), model);
    pack_code(code.indices, code.norm_byte, model.codebook.words_per_book,
              std::span<std::uint8_t>(packed.buffer.data() +
                                          static_cast<std::size_t>(n) * stride,
                                      stride));
  }
  return packed;
}

PackedCodes pack_training_codes(const CodeMatrix& codes, int modality,
                                const CcqModel& model) {
  const IndexMatrix& idx = codes.per_modality.at(static_cast<std::size_t>(modality));
  PackedCodes packed = make_container(static_cast<std::uint8_t>(modality),
                                      static_cast<std::size_t>(idx.cols()), model);
  const std::size_t stride = packed.bytes_per_point();
  for (Eigen::Index n = 0; n < idx.cols(); ++n) {
    const std::span<const std::uint32_t> code(idx.col(n).data(),
                                              static_cast<std::size_t>(idx.rows()));
    const std::uint8_t norm_byte = nearest_norm_bin(
        model.codebook.decode(code).squaredNorm(), model.norm_bin_centers);
    pack_code(code, norm_byte, model.codebook.words_per_book,
              std::span<std::uint8_t>(packed.buffer.data() +
                                          static_cast<std::size_t>(n) * stride,
                                      stride));
  }
  return packed;
}

}  // namespace ccq
