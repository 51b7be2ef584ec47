from vulnlab.cli import main_entry

main_entry()
