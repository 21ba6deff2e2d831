#pragma once

#include <stdexcept>
#include <string>

namespace deltar {

// Common base so the CLI can map any library failure to a data-error exit.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

// project() called on a point with z <= 0.
struct BehindCamera : Error {
  using Error::Error;
};

// Too few / rank-deficient points for a geometric fit.
struct DegenerateGeometry : Error {
  using Error::Error;
};

// Zone corner lands behind the RGB camera.
struct FootprintUndefined : Error {
  using Error::Error;
};

// Plane normals span rank < 3; translation is not observable.
struct UnobservableDof : Error {
  using Error::Error;
};

struct ConvergenceFailure : Error {
  using Error::Error;
};

// Loss or metric evaluated on a frame with no valid ground truth.
struct NoValidPixels : Error {
  using Error::Error;
};

// Patch rect does not intersect the feature map.
struct PatchUndefined : Error {
  using Error::Error;
};

// File missing or malformed.
struct DataError : Error {
  using Error::Error;
};

}  // namespace deltar
