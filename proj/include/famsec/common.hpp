// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace famsec {

// Error taxonomy. Every throwing path in the library uses one of these so
// callers (and the CLI exit-code mapping) can tell user mistakes apart from
// runtime failures.

// Bad configuration values: invalid spec fields, rank too large, missing data.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A documented precondition was violated by the caller.
struct contract_error : std::logic_error {
    explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

// Numeric-domain failure: zero-norm vectors, degenerate inputs.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset ingestion problems: bad layout, unreadable or corrupt files.
struct ingestion_error : std::runtime_error {
    explicit ingestion_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint / weights / bank loading problems.
struct load_error : std::runtime_error {
    explicit load_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss or gradient. Carries a diagnostic
// payload describing where the divergence was detected.
struct divergence_error : std::runtime_error {
    divergence_error(const std::string& msg, long step_, double loss_)
        : std::runtime_error(msg), step(step_), loss(loss_) {}
    long step = -1;
    double loss = 0.0;
};

#define FAMSEC_REQUIRE(cond, exc, msg) \
    do {                               \
        if (!(cond)) throw exc(msg);   \
    } while (0)

}  // namespace famsec
