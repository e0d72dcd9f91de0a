#pragma once

#include <stdexcept>
#include <string>

namespace gammabound {

// All library failures derive from Error so callers can catch one type at
// the CLI boundary and map it onto the structured-error exit path.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& what) : Error("SchemaError: " + what) {}
};

class EmptyDataset : public Error {
public:
    explicit EmptyDataset(const std::string& what = "dataset is empty")
        : Error("EmptyDataset: " + what) {}
};

class MissingStudyIndicator : public Error {
public:
    explicit MissingStudyIndicator(const std::string& what = "record lacks study indicator s")
        : Error("MissingStudyIndicator: " + what) {}
};

class EmptyResult : public Error {
public:
    explicit EmptyResult(const std::string& what) : Error("EmptyResult: " + what) {}
};

class SingleArm : public Error {
public:
    explicit SingleArm(const std::string& what = "all treatment indicators are equal")
        : Error("SingleArm: " + what) {}
};

class SingleStudy : public Error {
public:
    explicit SingleStudy(const std::string& what = "all study indicators are equal")
        : Error("SingleStudy: " + what) {}
};

class NoConvergence : public Error {
public:
    explicit NoConvergence(const std::string& what) : Error("NoConvergence: " + what) {}
};

class TooFewRecords : public Error {
public:
    explicit TooFewRecords(const std::string& what) : Error("TooFewRecords: " + what) {}
};

class NonBinaryOutcome : public Error {
public:
    explicit NonBinaryOutcome(const std::string& what = "outcome is not {0,1}-valued")
        : Error("NonBinaryOutcome: " + what) {}
};

class FoldDegenerate : public Error {
public:
    explicit FoldDegenerate(const std::string& what) : Error("FoldDegenerate: " + what) {}
};

class EmptyArm : public Error {
public:
    explicit EmptyArm(const std::string& what) : Error("EmptyArm: " + what) {}
};

class LpInfeasible : public Error {
public:
    explicit LpInfeasible(const std::string& what) : Error("LpInfeasible: " + what) {}
};

class MissingNuisance : public Error {
public:
    explicit MissingNuisance(const std::string& what) : Error("MissingNuisance: " + what) {}
};

class EmptyTarget : public Error {
public:
    explicit EmptyTarget(const std::string& what = "target dataset is empty")
        : Error("EmptyTarget: " + what) {}
};

class DegenerateQuantile : public Error {
public:
    explicit DegenerateQuantile(const std::string& what) : Error("DegenerateQuantile: " + what) {}
};

class ZeroVariance : public Error {
public:
    explicit ZeroVariance(const std::string& what) : Error("ZeroVariance: " + what) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error("DomainError: " + what) {}
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error("InvalidArgument: " + what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("IoError: " + what) {}
};

}  // namespace gammabound
