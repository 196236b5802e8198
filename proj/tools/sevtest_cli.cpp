// Command-line front end. Placeholder, replaced as modules land.
int main() { return 0; }
