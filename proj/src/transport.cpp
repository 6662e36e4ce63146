#include "slurmbridge/transport.hpp"

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include "slurmbridge/digest.hpp"
#include "slurmbridge/error.hpp"
#include "slurmbridge/jobscript.hpp"
#include "slurmbridge/subprocess.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

std::string parent_of(const std::string& remote) {
  const auto slash = remote.find_last_of('/');
  if (slash == std::string::npos) return ".";
  if (slash == 0) return "/";
  return remote.substr(0, slash);
}

ExecResult to_exec_result(const ProcessResult& r) {
  return {r.exit_code, r.out, r.err, static_cast<std::int64_t>(r.elapsed.count())};
}

ProcessOptions local_options(const ExecOptions& options) {
  return {options.cwd, options.env, options.deadline};
}

}  // namespace

TransferReport Endpoint::put_file(const fs::path& local, const std::string& remote) {
  std::error_code ec;
  if (!fs::is_regular_file(local, ec)) throw Error(Errc::SourceMissing, local.string(), "no such local file");
  if (!path_exists(parent_of(remote)))
    throw Error(Errc::DestinationUnwritable, remote, "remote directory does not exist");

  TransferReport report{fs::file_size(local), sha256_file(local)};
  const std::string staging = remote + ".part";
  upload(local, staging);
  if (remote_checksum(staging) != report.checksum) {
    remove_tree(staging);
    throw Error(Errc::ChecksumMismatch, remote, "remote digest differs from local " + report.checksum);
  }
  const auto mv = exec({"mv", "-f", staging, remote});
  if (!mv.ok()) {
    remove_tree(staging);
    throw Error(Errc::DestinationUnwritable, remote, mv.stderr_text);
  }
  return report;
}

TransferReport Endpoint::get_file(const std::string& remote, const fs::path& local) {
  if (!path_exists(remote)) throw Error(Errc::SourceMissing, remote, "no such remote file");
  const auto parent = local.parent_path().empty() ? fs::path(".") : local.parent_path();
  std::error_code ec;
  if (!fs::is_directory(parent, ec)) throw Error(Errc::DestinationUnwritable, local.string(), "no such directory");

  const auto expected = remote_checksum(remote);
  fs::path staging = local;
  staging += ".part";
  download(remote, staging);
  const auto actual = sha256_file(staging);
  if (actual != expected) {
    fs::remove(staging, ec);
    throw Error(Errc::ChecksumMismatch, remote, "local digest " + actual + " differs from remote " + expected);
  }
  fs::rename(staging, local, ec);
  if (ec) {
    fs::remove(staging, ec);
    throw Error(Errc::DestinationUnwritable, local.string(), ec.message());
  }
  return {fs::file_size(local), actual};
}

TransferReport Endpoint::put_text(std::string_view content, const std::string& remote) {
  auto tmpl = (fs::temp_directory_path() / "slurmbridge-XXXXXX").string();
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) throw Error(Errc::DestinationUnwritable, tmpl, "cannot create temporary file");
  ::close(fd);
  const fs::path tmp(tmpl);
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!out) throw Error(Errc::DestinationUnwritable, tmpl, "write failed");
    }
    auto report = put_file(tmp, remote);
    fs::remove(tmp);
    return report;
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

bool Endpoint::path_exists(const std::string& remote) { return exec({"test", "-e", remote}).ok(); }

void Endpoint::make_dirs(const std::string& remote) {
  const auto r = exec({"mkdir", "-p", remote});
  if (!r.ok()) throw Error(Errc::DestinationUnwritable, remote, r.stderr_text);
}

void Endpoint::remove_tree(const std::string& remote) { exec({"rm", "-rf", remote}); }

std::string Endpoint::remote_checksum(const std::string& remote) {
  const auto r = exec({"sha256sum", remote});
  const auto end = r.stdout_text.find_first_of(" \t\n");
  if (!r.ok() || end != 64) throw Error(Errc::SourceMissing, remote, "cannot compute remote digest: " + r.stderr_text);
  return r.stdout_text.substr(0, end);
}

// --- LocalEndpoint ---------------------------------------------------------

ExecResult LocalEndpoint::exec(const std::vector<std::string>& argv, const ExecOptions& options) {
  const auto r = run_process(argv, local_options(options));
  if (r.timed_out) throw Error(Errc::Timeout, argv.front(), "deadline of " + std::to_string(options.deadline.count()) + " ms exceeded");
  return to_exec_result(r);
}

void LocalEndpoint::upload(const fs::path& local, const std::string& remote) {
  std::error_code ec;
  fs::copy_file(local, remote, fs::copy_options::overwrite_existing, ec);
  if (ec) throw Error(Errc::DestinationUnwritable, remote, ec.message());
}

void LocalEndpoint::download(const std::string& remote, const fs::path& local) {
  std::error_code ec;
  fs::copy_file(remote, local, fs::copy_options::overwrite_existing, ec);
  if (ec) throw Error(Errc::DestinationUnwritable, local.string(), ec.message());
}

// --- SshEndpoint -----------------------------------------------------------

namespace {

// OpenSSH reserves exit status 255 for its own failures.
constexpr int kSshFailure = 255;

}  // namespace

SshEndpoint::SshEndpoint(ClusterProfile profile) : profile_(std::move(profile)) {}

std::string SshEndpoint::target() const { return profile_.user + "@" + profile_.host; }

std::vector<std::string> SshEndpoint::common_options(bool scp) const {
  std::vector<std::string> opts{scp ? "-P" : "-p", std::to_string(profile_.port), "-o", "BatchMode=yes",
                                "-o", "StrictHostKeyChecking=accept-new"};
  if (!profile_.key_path.empty()) {
    auto key = profile_.key_path.string();
    if (key.rfind("~/", 0) == 0)
      if (const char* home = std::getenv("HOME")) key = std::string(home) + key.substr(1);
    opts.insert(opts.end(), {"-i", key});
  }
  if (scp) opts.push_back("-q");
  return opts;
}

std::string SshEndpoint::remote_command_line(const std::vector<std::string>& argv, const ExecOptions& options) {
  std::string line;
  if (options.cwd) line += "cd " + shell_quote(*options.cwd) + " && ";
  if (!options.env.empty()) {
    line += "env";
    for (const auto& [k, v] : options.env) line += " " + shell_quote(k + "=" + v);
    line += ' ';
  }
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (i) line += ' ';
    line += shell_quote(argv[i]);
  }
  return line;
}

ExecResult SshEndpoint::exec(const std::vector<std::string>& argv, const ExecOptions& options) {
  std::vector<std::string> cmd{"ssh"};
  const auto opts = common_options(false);
  cmd.insert(cmd.end(), opts.begin(), opts.end());
  cmd.push_back(target());
  cmd.push_back("--");
  cmd.push_back(remote_command_line(argv, options));
  const auto r = run_process(cmd, {std::nullopt, {}, options.deadline});
  if (r.timed_out) throw Error(Errc::Timeout, argv.front(), "deadline exceeded");
  if (r.exit_code == kSshFailure) throw Error(Errc::ConnectionLost, target(), r.err);
  return to_exec_result(r);
}

void SshEndpoint::upload(const fs::path& local, const std::string& remote) {
  std::vector<std::string> cmd{"scp"};
  const auto opts = common_options(true);
  cmd.insert(cmd.end(), opts.begin(), opts.end());
  cmd.push_back(local.string());
  cmd.push_back(target() + ":" + remote);
  const auto r = run_process(cmd, {std::nullopt, {}, kDefaultDeadline});
  if (r.timed_out) throw Error(Errc::Timeout, "scp", "deadline exceeded");
  if (r.exit_code != 0) throw Error(Errc::DestinationUnwritable, remote, r.err);
}

void SshEndpoint::download(const std::string& remote, const fs::path& local) {
  std::vector<std::string> cmd{"scp"};
  const auto opts = common_options(true);
  cmd.insert(cmd.end(), opts.begin(), opts.end());
  cmd.push_back(target() + ":" + remote);
  cmd.push_back(local.string());
  const auto r = run_process(cmd, {std::nullopt, {}, kDefaultDeadline});
  if (r.timed_out) throw Error(Errc::Timeout, "scp", "deadline exceeded");
  if (r.exit_code != 0) throw Error(Errc::ConnectionLost, remote, r.err);
}

// --- EndpointPool ----------------------------------------------------------

EndpointPool::EndpointPool(Factory factory, std::size_t size) : factory_(std::move(factory)), size_(size ? size : 1) {}

EndpointPool::Lease::~Lease() {
  if (pool_ && endpoint_) pool_->release(std::move(endpoint_));
}

EndpointPool::Lease EndpointPool::acquire() {
  std::unique_lock lock(mutex_);
  available_.wait(lock, [&] { return !idle_.empty() || created_ < size_; });
  if (!idle_.empty()) {
    auto ep = std::move(idle_.back());
    idle_.pop_back();
    return Lease(this, std::move(ep));
  }
  ++created_;
  lock.unlock();
  try {
    return Lease(this, factory_());
  } catch (...) {
    std::lock_guard relock(mutex_);
    --created_;
    available_.notify_one();
    throw;
  }
}

void EndpointPool::release(std::unique_ptr<Endpoint> ep) {
  {
    std::lock_guard lock(mutex_);
    idle_.push_back(std::move(ep));
  }
  available_.notify_one();
}

// --- SystemClock -----------------------------------------------------------

std::chrono::milliseconds SystemClock::now() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch());
}

void SystemClock::sleep_for(std::chrono::milliseconds duration) { std::this_thread::sleep_for(duration); }

}  // namespace slurmbridge
