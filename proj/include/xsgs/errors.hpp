// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace xsgs {

/// Root of every error raised by the library. The CLI maps these to exit
/// code 2; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define XSGS_DEFINE_ERROR(Name)            \
    class Name : public Error {            \
    public:                                \
        using Error::Error;                \
    }

XSGS_DEFINE_ERROR(DimensionError);
XSGS_DEFINE_ERROR(ContractError);
XSGS_DEFINE_ERROR(ParseError);
XSGS_DEFINE_ERROR(FormatError);
XSGS_DEFINE_ERROR(LengthError);
XSGS_DEFINE_ERROR(EmptyCloudError);
XSGS_DEFINE_ERROR(SerializationError);
XSGS_DEFINE_ERROR(SpecError);
XSGS_DEFINE_ERROR(DomainError);
XSGS_DEFINE_ERROR(ExtractionError);
XSGS_DEFINE_ERROR(NormalizationError);
XSGS_DEFINE_ERROR(CapacityError);
XSGS_DEFINE_ERROR(AssignmentError);
XSGS_DEFINE_ERROR(ConfigError);
XSGS_DEFINE_ERROR(VersionError);

#undef XSGS_DEFINE_ERROR

}  // namespace xsgs
