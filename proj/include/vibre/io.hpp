// Copyright 2026 The vibre Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef VIBRE_IO_HPP_
#define VIBRE_IO_HPP_

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace vibre {

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

/// Opens path for writing, creating parent directories.
std::ofstream open_output(const std::filesystem::path& path);

/// Flushes and throws IoError if any write failed.
void finish_output(std::ofstream& out, const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel after every op. A no-op outside glibc.
void configure_allocator();

}  // namespace vibre

#endif  // VIBRE_IO_HPP_
