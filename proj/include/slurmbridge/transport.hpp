#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slurmbridge/config.hpp"
#include "slurmbridge/descriptor.hpp"

namespace slurmbridge {

struct ExecResult {
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
  std::int64_t duration_ms = 0;

  bool ok() const noexcept { return exit_code == 0; }
};

inline constexpr std::chrono::milliseconds kDefaultDeadline{300'000};

struct ExecOptions {
  std::optional<std::string> cwd;  // remote working directory
  EnvList env;                     // prepended to the command
  std::chrono::milliseconds deadline = kDefaultDeadline;
};

struct TransferReport {
  std::uint64_t bytes = 0;
  std::string checksum;  // hex SHA-256, verified on both sides

  bool operator==(const TransferReport&) const = default;
};

/// A remote machine reachable for command execution and file transfer.
///
/// Commands are argv token lists; backends quote them for whatever remote
/// shell they go through. Transport failures (ConnectionLost, Timeout) are
/// thrown; a nonzero exit status is an ordinary ExecResult.
///
/// put_file/get_file write to a temporary name, verify SHA-256 on both sides,
/// then rename, so the destination is either complete or absent.
///
/// A handle supports one in-flight operation at a time.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& options = {}) = 0;

  TransferReport put_file(const std::filesystem::path& local, const std::string& remote);
  TransferReport get_file(const std::string& remote, const std::filesystem::path& local);
  /// put_file for in-memory content (staged through a private temp file).
  TransferReport put_text(std::string_view content, const std::string& remote);

  bool path_exists(const std::string& remote);
  /// `mkdir -p`; throws Error{DestinationUnwritable}.
  void make_dirs(const std::string& remote);
  /// `rm -rf`; missing paths are fine.
  void remove_tree(const std::string& remote);
  /// SHA-256 of a remote file; throws Error{SourceMissing}.
  std::string remote_checksum(const std::string& remote);

 protected:
  /// Raw copies without verification; the destination directory exists.
  virtual void upload(const std::filesystem::path& local, const std::string& remote) = 0;
  virtual void download(const std::string& remote, const std::filesystem::path& local) = 0;
};

/// Runs commands on this machine through the subprocess layer; files are
/// copied with the local filesystem. Useful as a loopback backend and when the
/// client itself runs on a cluster login node.
class LocalEndpoint final : public Endpoint {
 public:
  ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& options = {}) override;

 protected:
  void upload(const std::filesystem::path& local, const std::string& remote) override;
  void download(const std::string& remote, const std::filesystem::path& local) override;
};

/// OpenSSH client backend (`ssh`/`scp` binaries) using key-file authentication.
class SshEndpoint final : public Endpoint {
 public:
  explicit SshEndpoint(ClusterProfile profile);

  ExecResult exec(const std::vector<std::string>& argv, const ExecOptions& options = {}) override;

  /// The remote command line sent over ssh for `argv` (exposed for tests).
  static std::string remote_command_line(const std::vector<std::string>& argv, const ExecOptions& options);

 protected:
  void upload(const std::filesystem::path& local, const std::string& remote) override;
  void download(const std::string& remote, const std::filesystem::path& local) override;

 private:
  std::vector<std::string> common_options(bool scp) const;
  std::string target() const;

  ClusterProfile profile_;
};

/// Fixed-size pool of endpoint handles, created on demand by a factory.
class EndpointPool {
 public:
  using Factory = std::function<std::unique_ptr<Endpoint>()>;

  static constexpr std::size_t kDefaultSize = 4;

  explicit EndpointPool(Factory factory, std::size_t size = kDefaultSize);

  class Lease {
   public:
    Lease(Lease&& other) noexcept : pool_(std::exchange(other.pool_, nullptr)), endpoint_(std::move(other.endpoint_)) {}
    Lease& operator=(Lease&&) = delete;
    ~Lease();

    Endpoint& operator*() const { return *endpoint_; }
    Endpoint* operator->() const { return endpoint_.get(); }

   private:
    friend class EndpointPool;
    Lease(EndpointPool* pool, std::unique_ptr<Endpoint> ep) : pool_(pool), endpoint_(std::move(ep)) {}
    EndpointPool* pool_;
    std::unique_ptr<Endpoint> endpoint_;
  };

  /// Blocks until a handle is free.
  Lease acquire();
  std::size_t size() const noexcept { return size_; }

 private:
  void release(std::unique_ptr<Endpoint> ep);

  Factory factory_;
  std::size_t size_;
  std::size_t created_ = 0;
  std::vector<std::unique_ptr<Endpoint>> idle_;
  std::mutex mutex_;
  std::condition_variable available_;
};

/// Time source for polling loops. The simulated cluster supplies one whose
/// sleeps advance virtual time.
class Clock {
 public:
  virtual ~Clock() = default;
  /// Monotonic time since an arbitrary origin.
  virtual std::chrono::milliseconds now() = 0;
  virtual void sleep_for(std::chrono::milliseconds duration) = 0;
};

class SystemClock final : public Clock {
 public:
  std::chrono::milliseconds now() override;
  void sleep_for(std::chrono::milliseconds duration) override;
};

}  // namespace slurmbridge
