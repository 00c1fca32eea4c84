#pragma once

#include <stdexcept>
#include <string>

namespace tubelink {

// Base error for every precondition or format violation raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace tubelink
