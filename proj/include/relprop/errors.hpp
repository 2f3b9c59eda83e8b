#pragma once

#include <stdexcept>
#include <string>

namespace relprop {

// Every failure the library reports, one code per contract violation.
enum class Errc {
    missing_file,
    io_failure,
    shape_mismatch,
    unknown_layer_type,
    non_finite_weight,
    checksum_mismatch,
    index_out_of_range,
    non_finite_value,
    non_positive_epsilon,
    invalid_alpha,
    unsupported_layer,
    not_first_layer,
    bounds_violation,
    invalid_assignment,
    invalid_config,
    no_box_for_class,
    dimension_mismatch,
    empty_input,
    malformed_document,
    missing_field,
    degenerate_box,
    target_larger_than_image,
};

inline const char* errc_name(Errc code) {
    switch (code) {
        case Errc::missing_file: return "missing_file";
        case Errc::io_failure: return "io_failure";
        case Errc::shape_mismatch: return "shape_mismatch";
        case Errc::unknown_layer_type: return "unknown_layer_type";
        case Errc::non_finite_weight: return "non_finite_weight";
        case Errc::checksum_mismatch: return "checksum_mismatch";
        case Errc::index_out_of_range: return "index_out_of_range";
        case Errc::non_finite_value: return "non_finite_value";
        case Errc::non_positive_epsilon: return "non_positive_epsilon";
        case Errc::invalid_alpha: return "invalid_alpha";
        case Errc::unsupported_layer: return "unsupported_layer";
        case Errc::not_first_layer: return "not_first_layer";
        case Errc::bounds_violation: return "bounds_violation";
        case Errc::invalid_assignment: return "invalid_assignment";
        case Errc::invalid_config: return "invalid_config";
        case Errc::no_box_for_class: return "no_box_for_class";
        case Errc::dimension_mismatch: return "dimension_mismatch";
        case Errc::empty_input: return "empty_input";
        case Errc::malformed_document: return "malformed_document";
        case Errc::missing_field: return "missing_field";
        case Errc::degenerate_box: return "degenerate_box";
        case Errc::target_larger_than_image: return "target_larger_than_image";
    }
    return "unknown_error";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace relprop
