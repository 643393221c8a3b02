fn main() {
    std::process::exit(capsule_pose_cli::run(std::env::args_os()));
}
