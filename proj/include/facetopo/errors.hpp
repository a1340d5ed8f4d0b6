#pragma once

#include <stdexcept>
#include <string>

namespace facetopo {

// Error taxonomy shared across modules. Everything derives from
// facetopo::error so the CLI boundary can catch the whole family
// and map it onto exit codes.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct dimension_error : error {
    using error::error;
};

struct validation_error : error {
    using error::error;
};

struct capacity_error : error {
    using error::error;
};

// Carries a human-readable position ("line 5", "byte 120") in the message.
struct parse_error : error {
    using error::error;
};

struct update_error : error {
    using error::error;
};

struct training_error : error {
    training_error(const std::string& msg, long step) : error(msg), step_index(step) {}
    long step_index;
};

}  // namespace facetopo
