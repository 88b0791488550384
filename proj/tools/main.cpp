#include "finv_app.hpp"

int main(int argc, char** argv) { return finv::app::main_entry(argc, argv); }
