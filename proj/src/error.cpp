#include "error.hpp"

namespace roomseq {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::CoordinateOutOfRange: return "coordinate_out_of_range";
    case ErrorCode::MalformedSequence: return "malformed_sequence";
    case ErrorCode::SequenceTooLong: return "sequence_too_long";
    case ErrorCode::TokenOutOfRange: return "token_out_of_range";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::AllMasked: return "all_masked";
    case ErrorCode::InfeasibleStep: return "infeasible_step";
    case ErrorCode::InfeasiblePartition: return "infeasible_partition";
    case ErrorCode::NonFiniteLoss: return "non_finite_loss";
    case ErrorCode::VocabularyMismatch: return "vocabulary_mismatch";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::TooSmall: return "too_small";
    case ErrorCode::TooFewSamples: return "too_few_samples";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Parse: return "parse_error";
  }
  return "unknown";
}

}  // namespace roomseq
